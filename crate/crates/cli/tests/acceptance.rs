//! Acceptance checks, one line each.
//!
//! Runs as a plain binary (no test harness) so every line is printed even
//! when everything passes. Exits non-zero if any check fails. The real-data
//! check is skipped when no corrupted-MNIST directory is available; point
//! `MNIST_C_ROOT` at one (default `data/mnist_c` under the workspace).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use active_mtrl::eval;
use active_mtrl::ingest::npy::{parse_npy, write_npy, NpyArray, NpyData};
use active_mtrl::ingest;
use active_mtrl::nalgebra::{DMatrix, DVector};
use active_mtrl::solver::{self, subspace_distance};
use active_mtrl::{make_sparse_example, sample_task, ProblemDims, RelevanceVector, RngStream, SolverConfig};
use active_mtrl_cli::runner::{self, Outcome};
use active_mtrl_cli::{ConfigBuilder, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: &str = "seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]\n";

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Check {
    id: u32,
    name: &'static str,
    verdict: Verdict,
    detail: String,
}

fn check(id: u32, name: &'static str, pass: bool, detail: String) -> Check {
    Check { id, name, verdict: if pass { Verdict::Pass } else { Verdict::Fail }, detail }
}

fn config(text: &str) -> ExperimentConfig {
    let mut b = ConfigBuilder::from_toml_str(text).expect("valid toml");
    b.set("output.dir", std::env::temp_dir().join("active-mtrl-acceptance").display().to_string());
    b.build().expect("valid config")
}

fn execute(text: &str) -> Outcome {
    runner::execute(&config(text)).expect("run succeeds")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn sample_savings() -> Check {
    let start = Instant::now();
    let out = execute(&format!(
        "mode = \"sweep\"\n{SEEDS}[environment]\nkind = \"sparse-example\"\nd = 30\nk = 5\nm = 20\nsigma = 0.5\nn_target = 2000\n\
         [schedule]\npreset = \"paper-experiment\"\nnum_epochs = 8\n[comparison]\nthreshold = 0.05\n\
         [sweep]\nmodes = [\"active\", \"uniform\"]\n"
    ));
    let secs = start.elapsed().as_secs_f64();
    let c = out.comparison.expect("paired run");
    let ratio = c.sample_savings_ratio.unwrap_or(f64::INFINITY);
    check(
        1,
        "sparse-example sample savings",
        ratio <= 0.5 && secs <= 120.0,
        format!(
            "median samples active {:?} vs uniform {:?}, ratio {ratio:.3} (need ≤ 0.5), {secs:.1}s (need ≤ 120s)",
            c.active_median, c.uniform_median
        ),
    )
}

fn min_norm_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_rel = 0.0f64;
    let mut beaten = 0;
    for _ in 0..100 {
        let k = rng.random_range(1..=8);
        let m = rng.random_range(k..=16);
        let w_mat = gaussian(&mut rng, k, m);
        let w = DVector::from_fn(k, |_, _| rng.sample(StandardNormal));
        let nu = solver::min_norm_combination(&w_mat, &w, None).to_dvector();
        let gram = &w_mat * w_mat.transpose();
        let closed = w_mat.transpose() * gram.clone().try_inverse().expect("full rank") * &w;
        worst_rel = worst_rel.max((&nu - &closed).norm() / closed.norm());
        // feasible perturbations: ν + (I − QQᵀ) g with Q an orthonormal basis of row(W)
        let q = w_mat.transpose().qr().q();
        let projector = DMatrix::identity(m, m) - &q * q.transpose();
        for _ in 0..50 {
            let g = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let other = &nu + &projector * g;
            if other.norm() < nu.norm() * (1.0 - 1e-12) {
                beaten += 1;
            }
        }
    }
    check(
        2,
        "min-norm combination matches closed form",
        worst_rel <= 1e-8 && beaten == 0,
        format!("worst relative error {worst_rel:.2e} (need ≤ 1e-8), {beaten} of 5000 feasible points shorter"),
    )
}

fn known_scaling() -> Check {
    let budgets = [5_000usize, 10_000, 20_000, 40_000, 80_000];
    let out = execute(&format!(
        "mode = \"known\"\n{SEEDS}[environment]\nkind = \"sparse-example\"\nn_target = 20000\n\
         [budget]\nn_totals = [5000, 10000, 20000, 40000, 80000]\n"
    ));
    let (xs, ys): (Vec<f64>, Vec<f64>) = budgets
        .iter()
        .map(|&n| {
            let risks = out
                .runs
                .iter()
                .filter(|r| r.n_total == Some(n))
                .map(|r| r.log.final_excess_risk().unwrap())
                .collect();
            ((n as f64).ln(), median(risks).ln())
        })
        .unzip();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    check(
        3,
        "known-relevance excess risk scales as 1/N",
        (-1.3..=-0.7).contains(&slope),
        format!("log-log slope {slope:.3} (need within [-1.3, -0.7])"),
    )
}

fn bracket_satisfaction() -> Check {
    let out = execute(&format!(
        "mode = \"active\"\n{SEEDS}[environment]\nkind = \"sparse-example\"\nsigma = 0.1\nn_target = 20000\n\
         [schedule]\nnum_epochs = 5\n"
    ));
    let epochs = out.runs[0].log.records.len();
    let mut worst = f64::INFINITY;
    let mut precondition = true;
    for e in 1..epochs {
        let fractions = out.runs.iter().map(|r| r.log.records[e].bracket_ok_fraction.unwrap()).collect();
        worst = worst.min(median(fractions));
        precondition &= out.runs.iter().all(|r| r.log.records[e].target_precondition_ok == Some(true));
    }
    check(
        4,
        "relevance estimates inside their brackets",
        worst >= 0.9 && precondition,
        format!("lowest per-epoch median in-bracket fraction from epoch 2: {worst:.3} (need ≥ 0.9), target precondition held: {precondition}"),
    )
}

fn s_star_exact() -> Check {
    const GRID: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_gap = 0.0f64;
    let mut below_grid = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=30);
        let values: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.sample::<f64, _>(StandardNormal) * rng.random_range(0.01..1.0) })
            .collect();
        if values.iter().all(|&v| v == 0.0) {
            continue;
        }
        let n_total = 10f64.powf(rng.random_range(0.0..5.0));
        let norm2: f64 = values.iter().map(|v| v * v).sum();
        let exact = eval::s_star(&RelevanceVector::new(values.clone()), n_total).unwrap().s_star;
        // thresholds where an entry drops out of the γ-support, swept upward
        let mut t: Vec<f64> = values.iter().map(|v| v * v * n_total / norm2).collect();
        t.sort_by(f64::total_cmp);
        let mut dropped = 0;
        let mut grid_min = f64::INFINITY;
        for i in 0..GRID {
            let gamma = i as f64 / (GRID - 1) as f64;
            while dropped < m && t[dropped] <= gamma {
                dropped += 1;
            }
            grid_min = grid_min.min((1.0 - gamma) * (m - dropped) as f64 + gamma * m as f64);
        }
        let resolution = m as f64 / (GRID - 1) as f64;
        worst_gap = worst_gap.max(grid_min - exact);
        if exact > grid_min + 1e-9 {
            below_grid += 1;
        }
        if grid_min - exact > resolution + 1e-9 {
            below_grid += 1;
        }
    }
    let mut e_m = vec![0.0; 20];
    e_m[19] = 1.0;
    let one = eval::s_star(&RelevanceVector::new(e_m), 10_000.0).unwrap();
    check(
        5,
        "effective sparsity is exact",
        below_grid == 0 && one.s_star == 1.0 && one.argmin_gamma == 0.0,
        format!(
            "{below_grid} of 1000 instances outside grid resolution (largest grid − exact {worst_gap:.2e}); ν = e_M gives {} at γ = {}",
            one.s_star, one.argmin_gamma
        ),
    )
}

fn noiseless_recovery() -> Check {
    let dims = ProblemDims::new(30, 5, 20).unwrap();
    let truth = make_sparse_example(dims, 0.0, 0).unwrap();
    let batches: Vec<_> = (1..=dims.m).map(|t| sample_task(&truth, t, 2 * dims.d, RngStream::new(6, t, 1)).unwrap()).collect();
    let model = solver::fit_joint_erm(&batches, dims, &SolverConfig::default()).unwrap();
    let mut objective = 0.0;
    let mut scale = 0.0;
    for (i, b) in batches.iter().enumerate() {
        objective += (&b.y - &b.x * &model.b_hat * model.w_hat.column(i)).norm_squared();
        scale += b.y.norm_squared();
    }
    let distance = subspace_distance(&model.b_hat, &truth.b_star).unwrap();
    check(
        6,
        "noiseless recovery",
        objective <= 1e-12 * scale && distance <= 1e-6,
        format!("objective / Σ‖Y‖² = {:.2e} (need ≤ 1e-12), subspace distance {distance:.2e} (need ≤ 1e-6)", objective / scale),
    )
}

fn determinism() -> Check {
    let base = "seeds = [4]\n[environment]\nkind = \"random\"\nd = 12\nk = 3\nm = 8\nn_target = 400\n\
                [schedule]\nnum_epochs = 4\n[budget]\nn_totals = [1500]\n[comparison]\nthreshold = 0.1\nladder_start = 100\nladder_max = 3000\n";
    let mut mismatched = Vec::new();
    for mode in ["known", "active", "uniform", "sweep"] {
        let text = format!("mode = \"{mode}\"\n{base}");
        let logs: Vec<Vec<u8>> = (0..2)
            .map(|rep| {
                let dir = tempfile::tempdir().unwrap();
                let mut b = ConfigBuilder::from_toml_str(&text).unwrap();
                b.set("output.dir", dir.path().join(format!("r{rep}")).display().to_string());
                let cfg = b.build().unwrap();
                active_mtrl_cli::run(&cfg).unwrap();
                std::fs::read(cfg.output.dir.join("runlog.csv")).unwrap()
            })
            .collect();
        if logs[0] != logs[1] || logs[0].is_empty() {
            mismatched.push(mode);
        }
    }
    check(
        7,
        "reruns are byte-identical",
        mismatched.is_empty(),
        format!("modes with differing runlog.csv: {mismatched:?}"),
    )
}

fn npy_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = 0;
    for _ in 0..200 {
        let rank = rng.random_range(0..=3);
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(0..=12)).collect();
        let n: usize = shape.iter().product();
        let data = match rng.random_range(0..3) {
            0 => NpyData::U8((0..n).map(|_| rng.random()).collect()),
            1 => NpyData::I64((0..n).map(|_| rng.random()).collect()),
            _ => NpyData::F64((0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 1e3).collect()),
        };
        let array = NpyArray::new(shape, data).unwrap();
        let bytes = write_npy(&array);
        if parse_npy(&bytes).as_ref() != Ok(&array) || bytes[..6] != *b"\x93NUMPY" || !(bytes.len() - n * element_size(&array)).is_multiple_of(64) {
            failures += 1;
        }
    }
    check(8, "npy round trip", failures == 0, format!("{failures} of 200 arrays failed"))
}

fn element_size(a: &NpyArray) -> usize {
    match a.data {
        NpyData::U8(_) => 1,
        NpyData::I64(_) | NpyData::F64(_) => 8,
    }
}

fn mnist_c() -> Check {
    let root = std::env::var_os("MNIST_C_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist_c"));
    let name = "real data: active not worse on ≥ 6 of 10 targets";
    let corruptions = match ingest::list_corruptions(&root) {
        Ok(c) if !c.is_empty() => c,
        _ => {
            return Check { id: 9, name, verdict: Verdict::Skip, detail: format!("no dataset at {}", root.display()) };
        }
    };
    let targets: Vec<String> = (0..10).map(|i| format!("\"{}_{}\"", corruptions[i % corruptions.len()], i)).collect();
    let out = execute(&format!(
        "mode = \"real-suite\"\nseeds = [0]\n[environment]\nkind = \"real\"\nroot = {:?}\ntargets = [{}]\n",
        root.display().to_string(),
        targets.join(", ")
    ));
    let r = out.real_suite.expect("real-suite comparison");
    let n = r.per_target.len();
    check(
        9,
        name,
        r.active_not_worse >= 6,
        format!("active error ≤ uniform error on {}/{n} targets, mean gain {:+.2} points", r.active_not_worse, r.mean_accuracy_gain_pct),
    )
}

fn main() -> ExitCode {
    let checks: [fn() -> Check; 9] = [
        sample_savings,
        min_norm_oracle,
        known_scaling,
        bracket_satisfaction,
        s_star_exact,
        noiseless_recovery,
        determinism,
        npy_round_trip,
        mnist_c,
    ];
    let mut failed = 0;
    for run in checks {
        let c = run();
        let tag = match c.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("[{tag}] criterion {}: {}: {}", c.id, c.name, c.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
