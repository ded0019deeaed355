use std::path::PathBuf;
use std::process::ExitCode;

use active_mtrl::eval;
use active_mtrl::sampler;
use active_mtrl::RelevanceVector;
use active_mtrl_cli::{output, run, CliError, ConfigBuilder, ExperimentConfig};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use toml::Value;

#[derive(Parser)]
#[command(name = "active-mtrl", version, about = "Active multi-task linear representation learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Allocate source samples from the true task relevance, then fit once.
    RunKnown(RunArgs),
    /// Estimate task relevance epoch by epoch and allocate by it.
    RunActive(RunArgs),
    /// Spread the budget evenly over the source tasks.
    RunUniform(RunArgs),
    /// Several run modes over several seeds, in parallel.
    Sweep(RunArgs),
    /// Active vs uniform on corrupted-digit image tasks.
    RealSuite(RunArgs),
    /// Print sample-complexity calculator values.
    Bounds(BoundsArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds (comma separated).
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Environment kind: sparse-example, random or real.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    head_scale: Option<f64>,
    #[arg(long)]
    n_target: Option<usize>,
    /// Data root for real-suite.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Real-suite targets such as fog_3 (comma separated).
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    corruptions: Vec<String>,
    #[arg(long)]
    max_test: Option<usize>,
    /// Schedule preset: paper-experiment, theory or custom.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    epsilon_base: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    start_index: Option<i32>,
    /// Constant β instead of the preset's rule.
    #[arg(long)]
    beta: Option<f64>,
    /// Draw every epoch's samples fresh.
    #[arg(long)]
    no_reuse: bool,
    /// Constant per-task floor for active runs.
    #[arg(long)]
    floor: Option<usize>,
    #[arg(long)]
    hard_cap: Option<usize>,
    #[arg(long)]
    sigma_lower: Option<f64>,
    /// Source budgets for known and uniform runs (comma separated).
    #[arg(long, value_delimiter = ',')]
    n_total: Vec<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    known_floor: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Solver initialization: svd-of-task-estimates or random-orthonormal.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    rcond: Option<f64>,
    /// Sweep run modes: known, active, uniform (comma separated).
    #[arg(long, value_delimiter = ',')]
    modes: Vec<String>,
    /// Concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Excess-risk level for the active vs uniform comparison.
    #[arg(long)]
    threshold: Option<f64>,
    /// Run uniform at the listed budgets instead of the comparison ladder.
    #[arg(long)]
    no_compare: bool,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

fn ints(v: &[usize]) -> Value {
    Value::Array(v.iter().map(|&x| int(x)).collect())
}

fn strs(v: &[String]) -> Value {
    Value::Array(v.iter().map(|s| Value::String(s.clone())).collect())
}

impl RunArgs {
    fn builder(&self, mode: &str) -> Result<ConfigBuilder, CliError> {
        let mut b = match &self.config {
            Some(path) => ConfigBuilder::from_file(path)?,
            None => ConfigBuilder::new(),
        };
        b.set("mode", mode);
        let s = &mut b;
        if let Some(v) = &self.out {
            s.set("output.dir", v.display().to_string());
        }
        if !self.seed.is_empty() {
            s.set("seeds", Value::Array(self.seed.iter().map(|&x| Value::Integer(x as i64)).collect()));
        }
        if let Some(v) = &self.env {
            s.set("environment.kind", v.as_str());
        }
        for (key, v) in [("d", self.d), ("k", self.k), ("m", self.m), ("n_target", self.n_target), ("max_test", self.max_test)] {
            if let Some(v) = v {
                s.set(&format!("environment.{key}"), int(v));
            }
        }
        for (key, v) in [("sigma", self.sigma), ("head_scale", self.head_scale)] {
            if let Some(v) = v {
                s.set(&format!("environment.{key}"), v);
            }
        }
        if let Some(v) = &self.root {
            s.set("environment.root", v.display().to_string());
        }
        if !self.targets.is_empty() {
            s.set("environment.targets", strs(&self.targets));
        }
        if !self.corruptions.is_empty() {
            s.set("environment.corruptions", strs(&self.corruptions));
        }
        if let Some(v) = &self.schedule {
            s.set("schedule.preset", v.as_str());
        }
        if let Some(v) = self.epochs {
            s.set("schedule.num_epochs", int(v));
        }
        if let Some(v) = self.epsilon_base {
            s.set("schedule.epsilon_base", v);
        }
        if let Some(v) = self.start_index {
            s.set("schedule.start_index", i64::from(v));
        }
        if let Some(v) = self.beta {
            let mut t = toml::Table::new();
            t.insert("constant".into(), Value::Float(v));
            s.set("schedule.beta", Value::Table(t));
        }
        if self.no_reuse {
            s.set("schedule.reuse", false);
        }
        if let Some(v) = self.floor {
            s.set("schedule.floor_override", int(v));
        }
        if let Some(v) = self.hard_cap {
            s.set("schedule.hard_cap", int(v));
        }
        if let Some(v) = self.sigma_lower {
            s.set("schedule.sigma_lower", v);
        }
        if !self.n_total.is_empty() {
            s.set("budget.n_totals", ints(&self.n_total));
        }
        if let Some(v) = self.delta {
            s.set("budget.delta", v);
        }
        if let Some(v) = self.known_floor {
            s.set("budget.known_floor_override", int(v));
        }
        if let Some(v) = self.max_iters {
            s.set("solver.max_altmin_iters", int(v));
        }
        if let Some(v) = self.tol {
            s.set("solver.rel_objective_tol", v);
        }
        if let Some(v) = &self.init {
            s.set("solver.init_mode", v.as_str());
        }
        if let Some(v) = self.rcond {
            s.set("solver.pinv_rcond", v);
        }
        if !self.modes.is_empty() {
            s.set("sweep.modes", strs(&self.modes));
        }
        if let Some(v) = self.jobs {
            s.set("sweep.jobs", int(v));
        }
        if let Some(v) = self.threshold {
            s.set("comparison.threshold", v);
        }
        if self.no_compare {
            s.set("comparison.enabled", false);
        }
        b.apply_env()?;
        Ok(b)
    }
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long, default_value_t = 30)]
    d: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Target accuracy: excess risk at most epsilon².
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Budget at which the effective sparsity is evaluated.
    #[arg(long, default_value_t = 10_000.0)]
    n_total: f64,
    /// Task relevance (comma separated); defaults to the sparse example's e_M.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    nu: Vec<f64>,
    /// Lower bound on σ_min(W*) for the theory β.
    #[arg(long, default_value_t = 1.0)]
    sigma_lower: f64,
    /// Bound on the head norms for the theory β.
    #[arg(long, default_value_t = 1.0)]
    head_norm: f64,
}

fn bounds(args: &BoundsArgs) -> Result<serde_json::Value, CliError> {
    let nu = if args.nu.is_empty() {
        let mut v = vec![0.0; args.m];
        if let Some(last) = v.last_mut() {
            *last = 1.0;
        }
        RelevanceVector::new(v)
    } else if args.nu.len() == args.m {
        RelevanceVector::new(args.nu.clone())
    } else {
        return Err(CliError::Config(format!("--nu has {} entries but --m is {}", args.nu.len(), args.m)));
    };
    let sparsity = eval::s_star(&nu, args.n_total)?;
    let known = eval::source_bound_known(args.k, args.d, args.m, args.delta, args.sigma, sparsity.s_star, nu.norm2(), args.epsilon)?;
    let uniform = eval::source_bound_uniform(args.k, args.d, args.m, args.delta, args.sigma, nu.norm2(), args.epsilon)?;
    let beta = sampler::beta_theory(args.k, args.head_norm, args.m, args.d, args.n_total, args.epsilon, args.delta, args.sigma_lower)?;
    Ok(json!({
        "s_star": sparsity.s_star,
        "argmin_gamma": sparsity.argmin_gamma,
        "support_size_at_argmin": sparsity.support_size_at_argmin,
        "nu_norm2": nu.norm2(),
        "known_relevance_bound": known,
        "uniform_bound": uniform,
        "ratio": known / uniform,
        "known_floor": sampler::known_floor(args.k, args.d, args.m, args.delta),
        "beta_theory": beta,
    }))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (args, mode) = match &cli.command {
        Command::RunKnown(a) => (a, "known"),
        Command::RunActive(a) => (a, "active"),
        Command::RunUniform(a) => (a, "uniform"),
        Command::Sweep(a) => (a, "sweep"),
        Command::RealSuite(a) => (a, "real-suite"),
        Command::Bounds(b) => {
            let report = bounds(b)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("json values serialize"));
            return Ok(());
        }
    };
    let config: ExperimentConfig = args.builder(mode)?.build()?;
    if args.print_config {
        print!("{}", config.to_toml_string()?);
        return Ok(());
    }
    let outcome = run(&config)?;
    let dir = config.output.dir.display();
    eprintln!(
        "{} runs in {:.1}s; wrote {dir}/{} and {dir}/{}",
        outcome.runs.len(),
        outcome.wall_time_secs,
        output::RUNLOG,
        output::SUMMARY
    );
    if let Some(c) = &outcome.comparison {
        match c.sample_savings_ratio {
            Some(r) => eprintln!("active/uniform samples to reach excess risk {}: {r:.3}", c.threshold),
            None => eprintln!("threshold {} not reached by the median seed of both modes", c.threshold),
        }
    }
    if let Some(r) = &outcome.real_suite {
        eprintln!(
            "active not worse on {}/{} targets; mean accuracy gain {:+.2} points",
            r.active_not_worse,
            r.per_target.len(),
            r.mean_accuracy_gain_pct
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
