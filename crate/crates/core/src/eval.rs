//! Excess risk, effective sparsity `s*`, sample-complexity calculators and
//! runtime diagnostics for relevance estimates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::env::{GroundTruth, SampleBatch};
use crate::error::{Error, Result};
use crate::linalg;
use crate::solver::{LinearModel, RelevanceVector};

/// Population excess risk on the target under identity input covariance:
/// `‖B̂ŵ_{M+1} − B*w*_{M+1}‖²`.
pub fn excess_risk_analytic(model: &LinearModel, truth: &GroundTruth) -> Result<f64> {
    if model.b_hat.nrows() != truth.dims.d || model.w_target_hat.len() != model.b_hat.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{} with head of length {}, truth has d={}",
            model.b_hat.nrows(),
            model.b_hat.ncols(),
            model.w_target_hat.len(),
            truth.dims.d
        )));
    }
    let diff = model.target_coefficient() - &truth.b_star * &truth.w_target;
    Ok(diff.norm_squared())
}

/// What to subtract from the test-set mean squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskBaseline {
    /// Irreducible noise level σ (synthetic data).
    NoiseLevel(f64),
    /// A reference model's loss on the same test set (real data).
    Loss(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRisk {
    pub mse: f64,
    /// `mse` minus the baseline; may be negative.
    pub excess: f64,
    /// Fraction misclassified when predictions are thresholded at 0.5
    /// against {0,1} targets.
    pub classification_error: f64,
}

/// Test-set excess loss of the target predictor.
pub fn excess_risk_empirical(model: &LinearModel, test: &SampleBatch, baseline: RiskBaseline) -> Result<EmpiricalRisk> {
    if test.is_empty() {
        return Err(Error::EmptyBatch(test.task));
    }
    if test.dim() != model.b_hat.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "test inputs have dimension {} but the model expects {}",
            test.dim(),
            model.b_hat.nrows()
        )));
    }
    let pred = model.predict_target(&test.x);
    let n = test.len() as f64;
    let mse = (&pred - &test.y).norm_squared() / n;
    let wrong = pred
        .iter()
        .zip(test.y.iter())
        .filter(|(p, y)| (**p > 0.5) != (**y > 0.5))
        .count();
    let reference = match baseline {
        RiskBaseline::NoiseLevel(sigma) => sigma * sigma,
        RiskBaseline::Loss(loss) => loss,
    };
    Ok(EmpiricalRisk { mse, excess: mse - reference, classification_error: wrong as f64 / n })
}

/// Result of minimizing `(1−γ)‖ν*‖_{0,γ} + γM` over `γ ∈ [0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub s_star: f64,
    pub argmin_gamma: f64,
    pub support_size_at_argmin: usize,
    /// `ν* = 0`; the report is then `s* = 0` at `γ = 0`.
    pub degenerate: bool,
}

/// Breakpoints `t_m = ν_m² N / ‖ν‖²`; entry `m` is in the γ-support iff
/// `t_m > γ`.
fn breakpoints(nu: &RelevanceVector, n_total: f64) -> Vec<f64> {
    nu.values.iter().map(|v| v * v * n_total / nu.norm2()).collect()
}

/// `‖ν‖_{0,γ} = |{m : |ν_m| > √(γ‖ν‖²/N)}|`, evaluated as `ν_m² N/‖ν‖² > γ`
/// so that it agrees exactly with the breakpoints [`s_star`] searches.
pub fn gamma_support_size(nu: &RelevanceVector, n_total: f64, gamma: f64) -> usize {
    if nu.norm2() == 0.0 {
        return 0;
    }
    breakpoints(nu, n_total).into_iter().filter(|&t| t > gamma).count()
}

/// Exact effective sparsity `s*`.
///
/// The objective is linear in `γ` between the breakpoints
/// `t_m = ν_m² N / ‖ν‖²`, where `|ν_m| > √(γ‖ν‖²/N)` flips, and it can only
/// drop at a breakpoint, so the minimum sits on `{0, 1} ∪ {t_m ≤ 1}`.
/// Ties go to the smaller `γ`.
pub fn s_star(nu: &RelevanceVector, n_total: f64) -> Result<SparsityReport> {
    if !(n_total > 0.0) {
        return Err(Error::InvalidArgument(format!("N_total must be positive, got {n_total}")));
    }
    let m = nu.len() as f64;
    if nu.norm2() == 0.0 {
        return Ok(SparsityReport { s_star: 0.0, argmin_gamma: 0.0, support_size_at_argmin: 0, degenerate: true });
    }
    let t = breakpoints(nu, n_total);
    let mut candidates: Vec<f64> = t.iter().copied().filter(|&x| x <= 1.0).collect();
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best: Option<SparsityReport> = None;
    for gamma in candidates {
        let count = t.iter().filter(|&&x| x > gamma).count();
        let value = (1.0 - gamma) * count as f64 + gamma * m;
        if best.is_none_or(|b| value < b.s_star) {
            best = Some(SparsityReport {
                s_star: value,
                argmin_gamma: gamma,
                support_size_at_argmin: count,
                degenerate: false,
            });
        }
    }
    Ok(best.expect("candidate set is never empty"))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Source budget scaling for target-aware sampling with known relevance,
/// `(Kd + KM + log(1/δ)) σ² s* ‖ν*‖² ε⁻²`.
///
/// Unit constants, no log factors: a scaling calculator, not a certified bound.
#[allow(clippy::too_many_arguments)]
pub fn source_bound_known(k: usize, d: usize, m: usize, delta: f64, sigma: f64, s_star: f64, nu_norm2: f64, epsilon: f64) -> Result<f64> {
    for (name, v) in [("delta", delta), ("sigma", sigma), ("s_star", s_star), ("nu_norm2", nu_norm2), ("epsilon", epsilon)] {
        check_positive(name, v)?;
    }
    let (k, d, m) = (k as f64, d as f64, m as f64);
    Ok((k * d + k * m + (1.0 / delta).ln()) * sigma * sigma * s_star * nu_norm2 / (epsilon * epsilon))
}

/// Source budget scaling for uniform sampling: [`source_bound_known`] with
/// `s*` replaced by `M`.
pub fn source_bound_uniform(k: usize, d: usize, m: usize, delta: f64, sigma: f64, nu_norm2: f64, epsilon: f64) -> Result<f64> {
    source_bound_known(k, d, m, delta, sigma, m as f64, nu_norm2, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BracketClass {
    HighRelevanceInBracket,
    LowRelevanceInBracket,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketReport {
    pub epoch: usize,
    pub epsilon: f64,
    pub classes: Vec<BracketClass>,
}

impl BracketReport {
    pub fn in_bracket_fraction(&self) -> f64 {
        if self.classes.is_empty() {
            return 1.0;
        }
        let ok = self.classes.iter().filter(|c| **c != BracketClass::Violated).count();
        ok as f64 / self.classes.len() as f64
    }
}

/// Checks each `ν̂(m)` against the closeness brackets around `ν*(m)`.
///
/// If `|ν*(m)| ≥ σ√ε` the entry must satisfy `|ν*(m)|/16 ≤ |ν̂(m)| ≤ 4|ν*(m)|`;
/// otherwise it must satisfy `|ν̂(m)| ≤ 4σ√ε`.
pub fn check_nu_brackets(nu_hat: &RelevanceVector, nu_star: &RelevanceVector, epsilon: f64, sigma: f64, epoch: usize) -> Result<BracketReport> {
    if nu_hat.len() != nu_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "relevance vectors have lengths {} and {}",
            nu_hat.len(),
            nu_star.len()
        )));
    }
    let scale = sigma * epsilon.sqrt();
    let classes = nu_hat
        .values
        .iter()
        .zip(&nu_star.values)
        .map(|(h, s)| {
            let (h, s) = (h.abs(), s.abs());
            if s >= scale {
                if h >= s / 16.0 && h <= 4.0 * s {
                    BracketClass::HighRelevanceInBracket
                } else {
                    BracketClass::Violated
                }
            } else if h <= 4.0 * scale {
                BracketClass::LowRelevanceInBracket
            } else {
                BracketClass::Violated
            }
        })
        .collect();
    Ok(BracketReport { epoch, epsilon, classes })
}

/// Whether `σ_K(B̂Ŵ) ≥ σ_K(W*)/2`, where `σ_K` is the K-th singular value.
pub fn check_sigma_min(w_hat: &DMatrix<f64>, b_hat: &DMatrix<f64>, sigma_min_w_star: f64) -> bool {
    let k = b_hat.ncols();
    if k == 0 || b_hat.ncols() != w_hat.nrows() {
        return false;
    }
    linalg::kth_singular_value(&(b_hat * w_hat), k) >= sigma_min_w_star / 2.0
}

/// `‖B̂Ŵ − B*W*‖_F`.
pub fn representation_error_norm(model: &LinearModel, truth: &GroundTruth) -> Result<f64> {
    let est = model.source_coefficients();
    let real = &truth.b_star * &truth.w_star;
    if est.shape() != real.shape() {
        return Err(Error::DimensionMismatch(format!(
            "estimated B̂Ŵ is {:?}, truth is {:?}",
            est.shape(),
            real.shape()
        )));
    }
    Ok((est - real).norm())
}
