//! Active multi-task linear representation learning.
//!
//! A shared orthonormal representation `B` (d×K) is learned jointly from M
//! source tasks, each with its own head `w_m`. The target task's head is
//! expressed as a minimum-norm combination `ν` of the source heads, and `ν`
//! drives how many samples each source task receives in the next epoch.
//!
//! Module map:
//! - [`env`]: problem dimensions, synthetic ground truth, seeded sampling oracles
//! - [`ingest`]: NPY reader/writer and the corruption × digit binary task suite
//! - [`solver`]: joint ERM by alternating minimization, target head, min-norm relevance
//! - [`sampler`]: allocation rules and the known-relevance, active and uniform loops
//! - [`eval`]: excess risk, effective sparsity `s*`, bound calculators, diagnostics

// `!(x > 0.0)` is used on purpose so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod linalg;
pub mod sampler;
pub mod solver;

pub use env::{
    concat_batches, make_random_environment, make_sparse_example, sample_task, GroundTruth,
    ProblemDims, RngStream, SampleBatch, SyntheticSource, TaskSource,
};
pub use error::{Error, Result};
pub use solver::{LinearModel, RelevanceVector, SolverConfig};

pub use nalgebra;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
