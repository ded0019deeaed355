//! Browser bindings for the demo page in `www/`.
//!
//! Every export returns a JSON string so the page needs no glue beyond
//! `JSON.parse`. The `*_json` functions are the plain-Rust versions the
//! exports wrap; they are what the native tests call.

use active_mtrl::eval::{gamma_support_size, s_star};
use active_mtrl::sampler::{self, ActiveOptions, EpochSchedule};
use active_mtrl::{make_sparse_example, ProblemDims, RelevanceVector, SolverConfig, SyntheticSource};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest problem the race accepts; keeps a browser tab responsive.
pub const MAX_RACE_DIM: usize = 60;
pub const MAX_RACE_TASKS: usize = 40;
pub const MAX_RACE_EPOCHS: usize = 10;

#[derive(Debug, Serialize)]
pub struct AllocationView {
    pub active: Vec<usize>,
    pub active_floor_applied: Vec<bool>,
    pub known: Option<Vec<usize>>,
    pub uniform: Vec<usize>,
    pub s_star: f64,
    pub argmin_gamma: f64,
}

#[derive(Debug, Serialize)]
pub struct SparsityCurve {
    pub gamma: Vec<f64>,
    pub value: Vec<f64>,
    pub s_star: f64,
    pub argmin_gamma: f64,
    pub support_at_argmin: usize,
}

#[derive(Debug, Serialize)]
pub struct RacePoint {
    pub epoch: usize,
    pub n_used: usize,
    pub active_risk: Option<f64>,
    pub uniform_risk: Option<f64>,
    pub nu_hat: Vec<f64>,
}

fn encode<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// One epoch's allocation under the active rule next to the known-relevance
/// and uniform splits of the same total.
pub fn allocation_json(nu: &[f64], beta: f64, epsilon: f64, n_total: usize, known_floor: usize) -> Result<String, String> {
    let nu = RelevanceVector::new(nu.to_vec());
    if nu.is_empty() {
        return Err("relevance vector is empty".into());
    }
    let active = sampler::allocate_active(&nu, beta, epsilon).map_err(|e| e.to_string())?;
    // the known rule refuses budgets below M floors; show nothing rather than fail
    let known = sampler::allocate_known(&nu, n_total, known_floor).ok().map(|p| p.n);
    let uniform = sampler::uniform_plan(n_total, nu.len()).map_err(|e| e.to_string())?;
    let report = s_star(&nu, n_total as f64).map_err(|e| e.to_string())?;
    encode(&AllocationView {
        active: active.n,
        active_floor_applied: active.floor_applied,
        known,
        uniform: uniform.n,
        s_star: report.s_star,
        argmin_gamma: report.argmin_gamma,
    })
}

/// `(1 − γ)‖ν‖_{0,γ} + γM` on an even grid over `[0, 1]`, plus the exact minimum.
pub fn sparsity_json(nu: &[f64], n_total: f64, points: usize) -> Result<String, String> {
    let nu = RelevanceVector::new(nu.to_vec());
    let report = s_star(&nu, n_total).map_err(|e| e.to_string())?;
    let points = points.clamp(2, 4096);
    let m = nu.len() as f64;
    let gamma: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let value = gamma
        .iter()
        .map(|&g| (1.0 - g) * gamma_support_size(&nu, n_total, g) as f64 + g * m)
        .collect();
    encode(&SparsityCurve {
        gamma,
        value,
        s_star: report.s_star,
        argmin_gamma: report.argmin_gamma,
        support_at_argmin: report.support_size_at_argmin,
    })
}

/// Runs active sampling on the 1-sparse example, then a uniform run at each
/// epoch's cumulative budget, both from the same seed.
pub fn race_json(d: usize, k: usize, m: usize, sigma: f64, epochs: usize, seed: u64) -> Result<String, String> {
    if d > MAX_RACE_DIM || m > MAX_RACE_TASKS || epochs > MAX_RACE_EPOCHS {
        return Err(format!(
            "demo limits are d ≤ {MAX_RACE_DIM}, M ≤ {MAX_RACE_TASKS}, epochs ≤ {MAX_RACE_EPOCHS}"
        ));
    }
    let dims = ProblemDims::new(d, k, m).map_err(|e| e.to_string())?;
    let n_target = 2000;
    let fresh = || -> Result<SyntheticSource, String> {
        let truth = make_sparse_example(dims, sigma, seed).map_err(|e| e.to_string())?;
        SyntheticSource::new(truth, seed, n_target).map_err(|e| e.to_string())
    };
    let config = SolverConfig::default();
    let mut source = fresh()?;
    let (_, log) = sampler::run_active(&mut source, &EpochSchedule::paper_experiment(epochs), &config, &ActiveOptions::default())
        .map_err(|e| e.to_string())?;

    let mut points = Vec::with_capacity(log.records.len());
    for r in &log.records {
        let mut baseline = fresh()?;
        let uniform_risk = match sampler::run_uniform(&mut baseline, r.n_used, &config) {
            Ok((_, u)) => u.final_excess_risk(),
            Err(_) => None,
        };
        points.push(RacePoint {
            epoch: r.epoch,
            n_used: r.n_used,
            active_risk: r.excess_risk,
            uniform_risk,
            nu_hat: r.nu_hat.clone(),
        });
    }
    encode(&points)
}

#[wasm_bindgen]
pub fn allocation(nu: &[f64], beta: f64, epsilon: f64, n_total: usize, known_floor: usize) -> Result<String, JsError> {
    allocation_json(nu, beta, epsilon, n_total, known_floor).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sparsity_curve(nu: &[f64], n_total: f64, points: usize) -> Result<String, JsError> {
    sparsity_json(nu, n_total, points).map_err(|e| JsError::new(&e))
}

/// `seed` is 32-bit so the page can pass a plain number.
#[wasm_bindgen]
pub fn race(d: usize, k: usize, m: usize, sigma: f64, epochs: usize, seed: u32) -> Result<String, JsError> {
    race_json(d, k, m, sigma, epochs, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn version() -> String {
    active_mtrl::VERSION.to_string()
}
