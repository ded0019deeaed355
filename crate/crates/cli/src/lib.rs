//! Command-line experiment runner: configuration, orchestration of known,
//! active and uniform runs (single, swept, or on real image data), and the
//! CSV/JSON outputs.

// `!(x > 0.0)` is used on purpose so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use config::{ConfigBuilder, ExperimentConfig, Mode};
pub use error::CliError;

/// Runs `config` and writes its outputs.
pub fn run(config: &ExperimentConfig) -> Result<runner::Outcome, CliError> {
    let outcome = runner::execute(config)?;
    output::write_outputs(config, &outcome)?;
    Ok(outcome)
}
