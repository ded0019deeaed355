//! Turns a config into independent jobs, runs them (concurrently up to
//! `sweep.jobs`), and pairs active runs with their uniform baselines.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use active_mtrl::eval::{self, EmpiricalRisk, RiskBaseline};
use active_mtrl::ingest::{self, ImageArray, RealSource};
use active_mtrl::sampler::{self, RunLog, RunMode};
use active_mtrl::{make_random_environment, make_sparse_example, SyntheticSource, TaskSource};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_target, Environment, ExperimentConfig};
use crate::error::CliError;

/// One training run and what it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub mode: RunMode,
    pub seed: u64,
    /// Real-suite target task.
    pub target: Option<String>,
    /// Requested budget for known and uniform runs.
    pub n_total: Option<usize>,
    pub log: RunLog,
    /// Held-out metrics on real data.
    pub test: Option<EmpiricalRisk>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub active_first_reach: Option<usize>,
    pub uniform_first_reach: Option<usize>,
}

/// Source samples needed by active and uniform runs to first reach the
/// excess-risk threshold. Seeds that never reach it count as infinitely
/// expensive when taking medians.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub threshold: f64,
    pub per_seed: Vec<SeedComparison>,
    pub active_median: Option<f64>,
    pub uniform_median: Option<f64>,
    /// `active_median / uniform_median`; below 1 means active saved samples.
    pub sample_savings_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetComparison {
    pub target: String,
    pub seed: u64,
    pub n_used: usize,
    pub active_error: f64,
    pub uniform_error: f64,
    pub active_mse: f64,
    pub uniform_mse: f64,
    /// Active test MSE minus the uniform run's.
    pub excess_vs_uniform: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealComparison {
    pub per_target: Vec<TargetComparison>,
    /// Pairs where the active error is at most the uniform error.
    pub active_not_worse: usize,
    /// Mean of `uniform_error − active_error`, in percentage points.
    pub mean_accuracy_gain_pct: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub runs: Vec<RunRecord>,
    pub comparison: Option<Comparison>,
    pub real_suite: Option<RealComparison>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
enum Job {
    Known { seed: u64, n_total: usize },
    Uniform { seed: u64, n_total: usize },
    UniformLadder { seed: u64 },
    Active { seed: u64 },
    RealPair { target: String, seed: u64 },
}

fn plan_jobs(config: &ExperimentConfig) -> Vec<Job> {
    let mut jobs = Vec::new();
    if let Environment::Real { targets, .. } = &config.environment {
        for target in targets {
            for &seed in &config.seeds {
                jobs.push(Job::RealPair { target: target.clone(), seed });
            }
        }
        return jobs;
    }
    for mode in config.run_modes() {
        for &seed in &config.seeds {
            match mode {
                RunMode::Active => jobs.push(Job::Active { seed }),
                RunMode::Uniform if config.compares() => jobs.push(Job::UniformLadder { seed }),
                RunMode::Uniform => jobs.extend(config.budget.n_totals.iter().map(|&n_total| Job::Uniform { seed, n_total })),
                RunMode::Known => jobs.extend(config.budget.n_totals.iter().map(|&n_total| Job::Known { seed, n_total })),
            }
        }
    }
    jobs
}

/// Synthetic source for one seed: the environment and the frozen target
/// sample both derive from `seed`.
pub fn synthetic_source(env: &Environment, seed: u64) -> Result<SyntheticSource, CliError> {
    let truth = match *env {
        Environment::SparseExample { d, k, m, sigma, .. } => make_sparse_example(active_mtrl::ProblemDims::new(d, k, m)?, sigma, seed)?,
        Environment::Random { d, k, m, sigma, head_scale, .. } => {
            make_random_environment(active_mtrl::ProblemDims::new(d, k, m)?, sigma, head_scale, seed)?
        }
        Environment::Real { .. } => return Err(CliError::Config("real data has no synthetic source".into())),
    };
    Ok(SyntheticSource::new(truth, seed, env.n_target())?)
}

fn record(run_id: String, mode: RunMode, seed: u64, n_total: Option<usize>, log: RunLog) -> RunRecord {
    RunRecord { run_id, mode, seed, target: None, n_total, log, test: None }
}

fn run_job(config: &ExperimentConfig, arrays: &[Arc<ImageArray>], job: &Job) -> Result<Vec<RunRecord>, CliError> {
    let solver = &config.solver;
    match job {
        Job::Known { seed, n_total } => {
            let mut source = synthetic_source(&config.environment, *seed)?;
            let nu = source.truth().expect("synthetic").nu_star();
            let (_, log) =
                sampler::run_known(&mut source, &nu, *n_total, config.budget.delta, config.budget.known_floor_override, solver)?;
            Ok(vec![record(format!("known-n{n_total}-s{seed}"), RunMode::Known, *seed, Some(*n_total), log)])
        }
        Job::Uniform { seed, n_total } => {
            let mut source = synthetic_source(&config.environment, *seed)?;
            let (_, log) = sampler::run_uniform(&mut source, *n_total, solver)?;
            Ok(vec![record(format!("uniform-n{n_total}-s{seed}"), RunMode::Uniform, *seed, Some(*n_total), log)])
        }
        Job::UniformLadder { seed } => {
            let mut out = Vec::new();
            for n_total in config.comparison.ladder() {
                let mut source = synthetic_source(&config.environment, *seed)?;
                let (_, log) = sampler::run_uniform(&mut source, n_total, solver)?;
                let reached = log.first_reach(config.comparison.threshold).is_some();
                out.push(record(format!("uniform-n{n_total}-s{seed}"), RunMode::Uniform, *seed, Some(n_total), log));
                if reached {
                    break;
                }
            }
            Ok(out)
        }
        Job::Active { seed } => {
            let mut source = synthetic_source(&config.environment, *seed)?;
            let (_, log) = sampler::run_active(
                &mut source,
                &config.schedule.epoch_schedule(),
                solver,
                &config.schedule.active_options(),
            )?;
            Ok(vec![record(format!("active-s{seed}"), RunMode::Active, *seed, None, log)])
        }
        Job::RealPair { target, seed } => run_real_pair(config, arrays, target, *seed),
    }
}

fn run_real_pair(config: &ExperimentConfig, arrays: &[Arc<ImageArray>], target: &str, seed: u64) -> Result<Vec<RunRecord>, CliError> {
    let Environment::Real { k, n_target, max_test, .. } = config.environment else {
        unreachable!("real pairs are only planned for real environments")
    };
    let (corruption, digit) = parse_target(target)?;
    let suite = ingest::make_real_suite(arrays, (&corruption, digit), n_target, max_test, seed)?;
    let test = suite.target_test.clone();

    let mut active = RealSource::new(suite.clone(), k)?;
    let (active_model, active_log) = sampler::run_active(
        &mut active,
        &config.schedule.epoch_schedule(),
        &config.solver,
        &config.schedule.active_options(),
    )?;
    // the baseline gets exactly the source budget the active run spent
    let mut uniform = RealSource::new(suite, k)?;
    let (uniform_model, uniform_log) = sampler::run_uniform(&mut uniform, active_log.n_used(), &config.solver)?;

    let uniform_risk = eval::excess_risk_empirical(&uniform_model, &test, RiskBaseline::Loss(0.0))?;
    let baseline = RiskBaseline::Loss(uniform_risk.mse);
    let active_risk = eval::excess_risk_empirical(&active_model, &test, baseline)?;
    let uniform_risk = eval::excess_risk_empirical(&uniform_model, &test, baseline)?;
    info!(
        "{target} seed {seed}: active error {:.4}, uniform error {:.4}",
        active_risk.classification_error, uniform_risk.classification_error
    );
    let n_total = uniform_log.n_used();
    Ok(vec![
        RunRecord {
            run_id: format!("active-{target}-s{seed}"),
            mode: RunMode::Active,
            seed,
            target: Some(target.to_string()),
            n_total: None,
            log: active_log,
            test: Some(active_risk),
        },
        RunRecord {
            run_id: format!("uniform-{target}-s{seed}"),
            mode: RunMode::Uniform,
            seed,
            target: Some(target.to_string()),
            n_total: Some(n_total),
            log: uniform_log,
            test: Some(uniform_risk),
        },
    ])
}

fn load_arrays(config: &ExperimentConfig) -> Result<Vec<Arc<ImageArray>>, CliError> {
    let Environment::Real { root, targets, corruptions, .. } = &config.environment else {
        return Ok(Vec::new());
    };
    let mut names = if corruptions.is_empty() { list_corruptions(root)? } else { corruptions.clone() };
    for t in targets {
        let (c, _) = parse_target(t)?;
        if !names.contains(&c) {
            names.push(c);
        }
    }
    names.sort();
    info!("loading {} corruption types from {}", names.len(), root.display());
    Ok(ingest::load_all(root, &names)?)
}

fn list_corruptions(root: &Path) -> Result<Vec<String>, CliError> {
    let names = ingest::list_corruptions(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
    if names.is_empty() {
        return Err(CliError::Io(format!("no <corruption>/images.npy found under {}", root.display())));
    }
    Ok(names)
}

/// Median where `None` ranks above every value.
pub fn median_reach(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by_key(|x| x.unwrap_or(usize::MAX));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].map(|x| x as f64)
    } else {
        Some((v[n / 2 - 1]? as f64 + v[n / 2]? as f64) / 2.0)
    }
}

fn compare(config: &ExperimentConfig, runs: &[RunRecord]) -> Comparison {
    let threshold = config.comparison.threshold;
    let per_seed: Vec<SeedComparison> = config
        .seeds
        .iter()
        .map(|&seed| {
            let of_seed = |mode| runs.iter().filter(move |r| r.seed == seed && r.mode == mode);
            SeedComparison {
                seed,
                active_first_reach: of_seed(RunMode::Active).find_map(|r| r.log.first_reach(threshold)),
                uniform_first_reach: of_seed(RunMode::Uniform).find_map(|r| r.log.first_reach(threshold)),
            }
        })
        .collect();
    let active_median = median_reach(&per_seed.iter().map(|s| s.active_first_reach).collect::<Vec<_>>());
    let uniform_median = median_reach(&per_seed.iter().map(|s| s.uniform_first_reach).collect::<Vec<_>>());
    let sample_savings_ratio = match (active_median, uniform_median) {
        (Some(a), Some(u)) if u > 0.0 => Some(a / u),
        _ => None,
    };
    Comparison { threshold, per_seed, active_median, uniform_median, sample_savings_ratio }
}

fn compare_real(runs: &[RunRecord]) -> RealComparison {
    let per_target: Vec<TargetComparison> = runs
        .chunks(2)
        .filter_map(|pair| {
            let [a, u] = pair else { return None };
            let (at, ut) = (a.test?, u.test?);
            Some(TargetComparison {
                target: a.target.clone().unwrap_or_default(),
                seed: a.seed,
                n_used: a.log.n_used(),
                active_error: at.classification_error,
                uniform_error: ut.classification_error,
                active_mse: at.mse,
                uniform_mse: ut.mse,
                excess_vs_uniform: at.excess,
            })
        })
        .collect();
    let active_not_worse = per_target.iter().filter(|t| t.active_error <= t.uniform_error).count();
    let mean_accuracy_gain_pct = if per_target.is_empty() {
        0.0
    } else {
        100.0 * per_target.iter().map(|t| t.uniform_error - t.active_error).sum::<f64>() / per_target.len() as f64
    };
    RealComparison { per_target, active_not_worse, mean_accuracy_gain_pct }
}

/// Runs every job of `config`.
pub fn execute(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    config.validate()?;
    let start = Instant::now();
    let arrays = load_arrays(config)?;
    let jobs = plan_jobs(config);
    info!("running {} jobs on {} threads", jobs.len(), config.sweep.jobs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.sweep.jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<Vec<RunRecord>, CliError>> =
        pool.install(|| jobs.par_iter().map(|job| run_job(config, &arrays, job)).collect());
    let mut runs = Vec::new();
    for r in results {
        runs.extend(r?);
    }
    let comparison = config.compares().then(|| compare(config, &runs));
    let real_suite = matches!(config.environment, Environment::Real { .. }).then(|| compare_real(&runs));
    Ok(Outcome { runs, comparison, real_suite, wall_time_secs: start.elapsed().as_secs_f64() })
}
