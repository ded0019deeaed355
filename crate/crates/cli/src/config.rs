//! Experiment configuration.
//!
//! A config starts as a TOML table (from a file or empty), receives flag
//! overrides key by key, gets every missing key filled with its default, and
//! only then is deserialized. The resolved [`ExperimentConfig`] therefore
//! spells out every value it runs with, and serializing it gives a file that
//! parses back to the same config.

use std::fs;
use std::path::{Path, PathBuf};

use active_mtrl::sampler::{self, BetaRule, EpochSchedule, RunMode, ScheduleMode};
use active_mtrl::{ProblemDims, SolverConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

pub const SEED_ENV: &str = "ACTIVE_MTRL_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Known,
    Active,
    Uniform,
    Sweep,
    RealSuite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Environment {
    SparseExample {
        d: usize,
        k: usize,
        m: usize,
        sigma: f64,
        n_target: usize,
    },
    Random {
        d: usize,
        k: usize,
        m: usize,
        sigma: f64,
        head_scale: f64,
        n_target: usize,
    },
    /// Directory of `<corruption>/images.npy` + `labels.npy`.
    Real {
        root: PathBuf,
        /// Target tasks as `<corruption>_<digit>`.
        targets: Vec<String>,
        /// Corruptions to load; empty loads every one found under `root`.
        corruptions: Vec<String>,
        k: usize,
        n_target: usize,
        max_test: usize,
    },
}

impl Environment {
    pub fn n_target(&self) -> usize {
        match *self {
            Environment::SparseExample { n_target, .. }
            | Environment::Random { n_target, .. }
            | Environment::Real { n_target, .. } => n_target,
        }
    }

    /// Dimensions of the synthetic environments.
    pub fn dims(&self) -> Option<ProblemDims> {
        match *self {
            Environment::SparseExample { d, k, m, .. } | Environment::Random { d, k, m, .. } => {
                Some(ProblemDims { d, k, m })
            }
            Environment::Real { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub preset: ScheduleMode,
    pub epsilon_base: f64,
    pub start_index: i32,
    pub num_epochs: usize,
    pub beta: BetaRule,
    /// Keep earlier epochs' samples and draw only the shortfall.
    pub reuse: bool,
    pub hard_cap: usize,
    /// Constant per-task floor in place of `β ε⁻¹`.
    pub floor_override: Option<usize>,
    pub sigma_lower: Option<f64>,
}

impl ScheduleConfig {
    pub fn epoch_schedule(&self) -> EpochSchedule {
        EpochSchedule {
            mode: self.preset,
            epsilon_base: self.epsilon_base,
            start_index: self.start_index,
            num_epochs: self.num_epochs,
            beta: self.beta,
        }
    }

    pub fn active_options(&self) -> sampler::ActiveOptions {
        sampler::ActiveOptions {
            reuse: self.reuse,
            sigma_lower: self.sigma_lower,
            hard_cap: self.hard_cap,
            floor_override: self.floor_override,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// Source budgets for known-relevance and uniform runs.
    pub n_totals: Vec<usize>,
    pub delta: f64,
    /// Replaces the known-relevance floor `⌈Kd + ln(M/δ)⌉`.
    pub known_floor_override: Option<usize>,
}

/// How active runs are compared against the uniform baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub enabled: bool,
    /// Excess-risk level whose first crossing is compared.
    pub threshold: f64,
    /// Uniform budgets tried in order: `start`, then ×`factor` up to `max`.
    pub ladder_start: usize,
    pub ladder_factor: f64,
    pub ladder_max: usize,
}

impl ComparisonConfig {
    pub fn ladder(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut n = self.ladder_start;
        while n <= self.ladder_max {
            out.push(n);
            n = ((n as f64 * self.ladder_factor).ceil() as usize).max(n + 1);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub modes: Vec<RunMode>,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub environment: Environment,
    pub schedule: ScheduleConfig,
    pub solver: SolverConfig,
    pub budget: BudgetConfig,
    pub comparison: ComparisonConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        ConfigBuilder::from_toml_str(text)?.build()
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// Run kinds executed by this config, in order.
    pub fn run_modes(&self) -> Vec<RunMode> {
        match self.mode {
            Mode::Known => vec![RunMode::Known],
            Mode::Active => vec![RunMode::Active],
            Mode::Uniform => vec![RunMode::Uniform],
            Mode::Sweep => self.sweep.modes.clone(),
            Mode::RealSuite => vec![RunMode::Active, RunMode::Uniform],
        }
    }

    /// Whether uniform runs walk the budget ladder to pair with active runs.
    pub fn compares(&self) -> bool {
        let modes = self.run_modes();
        self.mode != Mode::RealSuite
            && self.comparison.enabled
            && modes.contains(&RunMode::Active)
            && modes.contains(&RunMode::Uniform)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        match &self.environment {
            Environment::SparseExample { d, k, m, sigma, n_target } | Environment::Random { d, k, m, sigma, n_target, .. } => {
                if k > d {
                    return bad(format!("environment.k ({k}) must not exceed environment.d ({d})"));
                }
                if m < k {
                    return bad(format!("environment.m ({m}) must be at least environment.k ({k})"));
                }
                if *d == 0 || *k == 0 {
                    return bad("environment.d and environment.k must be positive".into());
                }
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return bad(format!("environment.sigma must be nonnegative, got {sigma}"));
                }
                if *n_target == 0 {
                    return bad("environment.n_target must be positive".into());
                }
                if let Environment::Random { head_scale, .. } = &self.environment {
                    if !(*head_scale > 0.0) {
                        return bad(format!("environment.head_scale must be positive, got {head_scale}"));
                    }
                }
                if self.mode == Mode::RealSuite {
                    return bad("mode real-suite needs environment.kind = \"real\"".into());
                }
            }
            Environment::Real { targets, k, n_target, .. } => {
                if self.mode != Mode::RealSuite {
                    return bad("environment.kind = \"real\" is only supported by mode real-suite".into());
                }
                if targets.is_empty() {
                    return bad("environment.targets must name at least one <corruption>_<digit> task".into());
                }
                for t in targets {
                    parse_target(t)?;
                }
                if *k == 0 || *n_target == 0 {
                    return bad("environment.k and environment.n_target must be positive".into());
                }
            }
        }
        self.schedule
            .epoch_schedule()
            .validate()
            .or_else(|e| bad(format!("schedule: {e}")))?;
        if let Some(s) = self.schedule.sigma_lower {
            if !(s > 0.0 && s <= 1.0) {
                return bad(format!("schedule.sigma_lower must lie in (0, 1], got {s}"));
            }
        }
        self.solver.validate().or_else(|e| bad(e.to_string()))?;
        if !(self.budget.delta > 0.0 && self.budget.delta < 1.0) {
            return bad(format!("budget.delta must lie in (0, 1), got {}", self.budget.delta));
        }
        let modes = self.run_modes();
        let needs_budget = modes.contains(&RunMode::Known) || (modes.contains(&RunMode::Uniform) && !self.compares());
        if needs_budget && (self.budget.n_totals.is_empty() || self.budget.n_totals.contains(&0)) {
            return bad("budget.n_totals must list positive budgets".into());
        }
        if self.compares() {
            let c = &self.comparison;
            if !(c.threshold > 0.0) || c.ladder_start == 0 || !(c.ladder_factor > 1.0) || c.ladder_max < c.ladder_start {
                return bad("comparison needs threshold > 0, ladder_start > 0, ladder_factor > 1, ladder_max ≥ ladder_start".into());
            }
        }
        if modes.is_empty() {
            return bad("sweep.modes must list at least one of known, active, uniform".into());
        }
        if self.sweep.jobs == 0 {
            return bad("sweep.jobs must be at least 1".into());
        }
        Ok(())
    }
}

/// Splits `fog_3` into `("fog", 3)`.
pub fn parse_target(spec: &str) -> Result<(String, u8), CliError> {
    let err = || CliError::Config(format!("target {spec:?} is not of the form <corruption>_<digit>"));
    let (corruption, digit) = spec.rsplit_once('_').ok_or_else(err)?;
    let digit: u8 = digit.parse().map_err(|_| err())?;
    if corruption.is_empty() || digit > 9 {
        return Err(err());
    }
    Ok((corruption.to_string(), digit))
}

/// Accumulates a config table from a file, flags and the environment.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    table: Table,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let table: Table = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        Ok(ConfigBuilder { table })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Sets a dotted key such as `environment.d`.
    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().expect("non-empty key");
        let mut table = &mut self.table;
        for p in parents {
            let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
            if !entry.is_table() {
                *entry = Value::Table(Table::new());
            }
            table = entry.as_table_mut().expect("just made a table");
        }
        table.insert(last.to_string(), value.into());
        self
    }

    /// Replaces the seed list with `ACTIVE_MTRL_SEED` when that is set and
    /// not blank.
    pub fn apply_env(&mut self) -> Result<&mut Self, CliError> {
        if let Some(raw) = std::env::var(SEED_ENV).ok().filter(|v| !v.trim().is_empty()) {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            self.set("seeds", Value::Array(vec![Value::Integer(seed as i64)]));
        }
        Ok(self)
    }

    pub fn build(&self) -> Result<ExperimentConfig, CliError> {
        let mut table = self.table.clone();
        fill_defaults(&mut table)?;
        let config: ExperimentConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }
}

fn get<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut value = table.get(parts.next()?)?;
    for p in parts {
        value = value.as_table()?.get(p)?;
    }
    Some(value)
}

fn default_at(table: &mut Table, key: &str, value: impl Serialize) -> Result<(), CliError> {
    if get(table, key).is_none() {
        let value = Value::try_from(value).map_err(|e| CliError::Config(format!("default for {key}: {e}")))?;
        let mut builder = ConfigBuilder { table: std::mem::take(table) };
        builder.set(key, value);
        *table = builder.table;
    }
    Ok(())
}

fn str_at<'a>(table: &'a Table, key: &str) -> Result<Option<&'a str>, CliError> {
    match get(table, key) {
        None => Ok(None),
        Some(v) => v
            .as_str()
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("{key} must be a string"))),
    }
}

fn fill_defaults(t: &mut Table) -> Result<(), CliError> {
    default_at(t, "mode", Mode::Active)?;
    let mode: Mode = get(t, "mode")
        .cloned()
        .expect("defaulted")
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("mode: {}", e.message())))?;
    let real = mode == Mode::RealSuite;

    default_at(t, "seeds", [0u64])?;

    default_at(t, "environment.kind", if real { "real" } else { "sparse-example" })?;
    let kind = str_at(t, "environment.kind")?.map(str::to_string);
    match kind.as_deref() {
        Some("real") => {
            default_at(t, "environment.targets", Vec::<String>::new())?;
            default_at(t, "environment.corruptions", Vec::<String>::new())?;
            default_at(t, "environment.k", 10u64)?;
            default_at(t, "environment.n_target", 500u64)?;
            default_at(t, "environment.max_test", 2000u64)?;
        }
        Some(kind) => {
            default_at(t, "environment.d", 30u64)?;
            default_at(t, "environment.k", 5u64)?;
            default_at(t, "environment.m", 20u64)?;
            default_at(t, "environment.sigma", 0.5)?;
            default_at(t, "environment.n_target", 2000u64)?;
            if kind == "random" {
                default_at(t, "environment.head_scale", 1.0)?;
            }
        }
        None => unreachable!("kind defaulted above"),
    }

    default_at(t, "budget.n_totals", [10_000u64])?;
    default_at(t, "budget.delta", 0.1)?;

    default_at(t, "schedule.preset", ScheduleMode::PaperExperiment)?;
    default_at(t, "schedule.num_epochs", if real { 4u64 } else { 8 })?;
    let preset = str_at(t, "schedule.preset")?.unwrap_or("paper-experiment").to_string();
    let (base, start) = if preset == "theory" { (2.0, 1) } else { (1.5, EpochSchedule::PAPER_EXPERIMENT_START) };
    default_at(t, "schedule.epsilon_base", base)?;
    default_at(t, "schedule.start_index", start)?;
    if preset == "theory" && get(t, "schedule.beta").is_none() {
        let beta = theory_beta(t)?;
        default_at(t, "schedule.beta", BetaRule::Constant(beta))?;
    }
    default_at(t, "schedule.beta", BetaRule::InverseNuNorm)?;
    default_at(t, "schedule.reuse", true)?;
    default_at(t, "schedule.hard_cap", sampler::DEFAULT_HARD_CAP as u64)?;
    if real {
        // a constant floor of 50 per task is what the linear real-data runs use
        default_at(t, "schedule.floor_override", 50u64)?;
    }

    let solver = SolverConfig::default();
    default_at(t, "solver.max_altmin_iters", solver.max_altmin_iters as u64)?;
    default_at(t, "solver.rel_objective_tol", solver.rel_objective_tol)?;
    default_at(t, "solver.init_mode", solver.init_mode)?;
    default_at(t, "solver.seed", solver.seed)?;

    default_at(t, "comparison.enabled", true)?;
    default_at(t, "comparison.threshold", 0.05)?;
    default_at(t, "comparison.ladder_start", 200u64)?;
    default_at(t, "comparison.ladder_factor", 1.1)?;
    default_at(t, "comparison.ladder_max", 200_000u64)?;

    default_at(t, "sweep.modes", [RunMode::Active, RunMode::Uniform])?;
    default_at(t, "sweep.jobs", 1u64)?;

    default_at(t, "output.dir", "out")?;
    Ok(())
}

/// Theory-preset β for the sparse example, where `R = 1` and `σ_min(W*) = 1`
/// unless `schedule.sigma_lower` says otherwise. Other environments must set
/// `schedule.beta` explicitly.
fn theory_beta(t: &Table) -> Result<f64, CliError> {
    if str_at(t, "environment.kind")? != Some("sparse-example") {
        return Err(CliError::Config(
            "schedule.preset = \"theory\" needs an explicit schedule.beta outside the sparse example".into(),
        ));
    }
    let int = |key: &str| -> Result<usize, CliError> {
        get(t, key)
            .and_then(Value::as_integer)
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| CliError::Config(format!("{key} must be a nonnegative integer")))
    };
    let float = |key: &str| -> Result<f64, CliError> {
        match get(t, key) {
            Some(Value::Float(f)) => Ok(*f),
            Some(Value::Integer(i)) => Ok(*i as f64),
            _ => Err(CliError::Config(format!("{key} must be a number"))),
        }
    };
    let (d, k, m) = (int("environment.d")?, int("environment.k")?, int("environment.m")?);
    let n_total = get(t, "budget.n_totals")
        .and_then(Value::as_array)
        .and_then(|a| a.first())
        .and_then(Value::as_integer)
        .ok_or_else(|| CliError::Config("budget.n_totals must list positive budgets".into()))? as f64;
    let last = int("schedule.start_index")? + int("schedule.num_epochs")?.saturating_sub(1);
    let epsilon = float("schedule.epsilon_base")?.powi(-(last as i32));
    let sigma_lower = if get(t, "schedule.sigma_lower").is_some() { float("schedule.sigma_lower")? } else { 1.0 };
    sampler::beta_theory(k, 1.0, m, d, n_total, epsilon, float("budget.delta")?, sigma_lower)
        .map_err(|e| CliError::Config(format!("schedule.beta: {e}")))
}
