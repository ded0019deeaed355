//! `runlog.csv`, `allocations.csv` and `summary.json`.
//!
//! `runlog.csv` has one row per epoch, in run order, with the columns
//!
//! ```text
//! run_id, seed, epoch, epsilon, beta, n_1..n_M, N_used_cumulative,
//! excess_risk, objective, nu_hat_1..nu_hat_M, bracket_ok_fraction, sigma_min_ok
//! ```
//!
//! Missing values are empty cells. `n_m` is the epoch's allocation for
//! task `m`. When `M` exceeds [`WIDE_TASK_LIMIT`] the per-task columns are
//! dropped and `allocations.csv` carries them in long form
//! (`run_id, epoch, task, n, nu_hat`).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::runner::{Comparison, Outcome, RealComparison, RunRecord};

pub const WIDE_TASK_LIMIT: usize = 32;
pub const RUNLOG: &str = "runlog.csv";
pub const ALLOCATIONS: &str = "allocations.csv";
pub const SUMMARY: &str = "summary.json";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn task_count(runs: &[RunRecord]) -> usize {
    runs.iter()
        .flat_map(|r| r.log.records.iter().map(|e| e.allocation.n.len()))
        .max()
        .unwrap_or(0)
}

pub fn runlog_header(m: usize) -> Vec<String> {
    let wide = m <= WIDE_TASK_LIMIT;
    let mut h: Vec<String> = ["run_id", "seed", "epoch", "epsilon", "beta"].map(String::from).to_vec();
    if wide {
        h.extend((1..=m).map(|t| format!("n_{t}")));
    }
    h.extend(["N_used_cumulative", "excess_risk", "objective"].map(String::from));
    if wide {
        h.extend((1..=m).map(|t| format!("nu_hat_{t}")));
    }
    h.extend(["bracket_ok_fraction", "sigma_min_ok"].map(String::from));
    h
}

/// Writes the run log, and the long-format allocation table when `M` is
/// large, into `dir`.
pub fn write_runlog(dir: &Path, runs: &[RunRecord]) -> Result<(), CliError> {
    let m = task_count(runs);
    let wide = m <= WIDE_TASK_LIMIT;
    let mut w = csv::Writer::from_path(dir.join(RUNLOG))?;
    w.write_record(runlog_header(m))?;
    for run in runs {
        for e in &run.log.records {
            let mut row = vec![run.run_id.clone(), run.seed.to_string(), e.epoch.to_string(), opt(e.epsilon), opt(e.beta)];
            if wide {
                row.extend((0..m).map(|t| opt(e.allocation.n.get(t))));
            }
            row.extend([e.n_used.to_string(), opt(e.excess_risk), e.objective.to_string()]);
            if wide {
                row.extend((0..m).map(|t| opt(e.nu_hat.get(t))));
            }
            row.extend([opt(e.bracket_ok_fraction), opt(e.sigma_min_ok)]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let long = dir.join(ALLOCATIONS);
    if wide {
        if long.exists() {
            fs::remove_file(&long)?;
        }
        return Ok(());
    }
    let mut w = csv::Writer::from_path(long)?;
    w.write_record(["run_id", "epoch", "task", "n", "nu_hat"])?;
    for run in runs {
        for e in &run.log.records {
            for t in 0..e.allocation.n.len() {
                w.write_record([
                    run.run_id.clone(),
                    e.epoch.to_string(),
                    (t + 1).to_string(),
                    e.allocation.n[t].to_string(),
                    opt(e.nu_hat.get(t)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
    core_version: &'static str,
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    run_id: &'a str,
    mode: active_mtrl::sampler::RunMode,
    seed: u64,
    target: Option<&'a str>,
    n_total: Option<usize>,
    epochs: usize,
    n_used: usize,
    final_excess_risk: Option<f64>,
    final_subspace_distance: Option<f64>,
    test_mse: Option<f64>,
    test_classification_error: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    tool: ToolInfo,
    config: &'a ExperimentConfig,
    wall_time_secs: f64,
    runs: Vec<RunSummary<'a>>,
    comparison: Option<&'a Comparison>,
    real_suite: Option<&'a RealComparison>,
}

pub fn summary_json(config: &ExperimentConfig, outcome: &Outcome) -> Result<String, CliError> {
    let runs = outcome
        .runs
        .iter()
        .map(|r| RunSummary {
            run_id: &r.run_id,
            mode: r.log.mode,
            seed: r.seed,
            target: r.target.as_deref(),
            n_total: r.n_total,
            epochs: r.log.total_epochs(),
            n_used: r.log.n_used(),
            final_excess_risk: r.log.final_excess_risk(),
            final_subspace_distance: r.log.records.last().and_then(|e| e.subspace_distance),
            test_mse: r.test.map(|t| t.mse),
            test_classification_error: r.test.map(|t| t.classification_error),
        })
        .collect();
    let summary = Summary {
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: active_mtrl::VERSION,
        },
        config,
        wall_time_secs: outcome.wall_time_secs,
        runs,
        comparison: outcome.comparison.as_ref(),
        real_suite: outcome.real_suite.as_ref(),
    };
    serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(format!("cannot encode summary: {e}")))
}

/// Writes every output file into `config.output.dir`.
pub fn write_outputs(config: &ExperimentConfig, outcome: &Outcome) -> Result<(), CliError> {
    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    write_runlog(dir, &outcome.runs)?;
    let mut f = fs::File::create(dir.join(SUMMARY))?;
    f.write_all(summary_json(config, outcome)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
