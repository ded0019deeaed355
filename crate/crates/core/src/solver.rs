//! Joint empirical risk minimization over the shared representation, the
//! target head fit, and minimum-norm task relevance.
//!
//! The joint objective `Σ_m ‖X_m B w_m − Y_m‖²` is minimized by alternating
//! minimization. Each half-step is an exact least-squares solve:
//!
//! - W-step: for fixed `B`, every head is an independent K-dimensional
//!   least-squares problem on the projected inputs `X_m B`.
//! - B-step: for fixed `W`, `vec(B)` solves the dK-dimensional normal
//!   equations `Σ_m (w_m w_mᵀ ⊗ X_mᵀX_m) vec(B) = Σ_m w_m ⊗ X_mᵀY_m`.
//!   The result is re-orthonormalized by a thin QR whose `R` factor is
//!   absorbed into `W`, which leaves the product `BW` unchanged.
//!
//! `B` is only identified up to a K×K rotation, so callers should compare
//! rotation-invariant quantities (`BW`, `Bw`, subspace distance).

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{ProblemDims, RngStream, SampleBatch};
use crate::error::{Error, Result};
use crate::linalg;

/// Above this input dimension per-task Gram matrices are not cached.
const GRAM_MAX_DIM: usize = 256;
/// Largest dK for which the B-step normal equations are formed densely.
const DENSE_B_STEP_MAX: usize = 2000;
const PCG_MAX_ITERS: usize = 500;
const PCG_REL_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Top-K left singular vectors of the d×M matrix of per-task estimates.
    SvdOfTaskEstimates,
    RandomOrthonormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_altmin_iters: usize,
    pub rel_objective_tol: f64,
    /// Relative singular-value cutoff for pseudo-inverses. `None` uses
    /// `max(rows, cols) · machine epsilon`.
    pub pinv_rcond: Option<f64>,
    pub init_mode: InitMode,
    /// Seed for random-orthonormal initialization.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_altmin_iters: 100,
            rel_objective_tol: 1e-9,
            pinv_rcond: None,
            init_mode: InitMode::SvdOfTaskEstimates,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_altmin_iters == 0 {
            return Err(Error::InvalidArgument("solver.max_altmin_iters must be at least 1".into()));
        }
        if !(self.rel_objective_tol > 0.0) {
            return Err(Error::InvalidArgument("solver.rel_objective_tol must be positive".into()));
        }
        if let Some(r) = self.pinv_rcond {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument("solver.pinv_rcond must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Relative objective decrease fell below the tolerance.
    Converged,
    MaxIters,
    /// A step failed to decrease the objective (or the representation lost
    /// rank); the last accepted iterate is kept.
    Stalled,
}

/// Estimated representation, source heads and target head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// d×K, orthonormal columns.
    pub b_hat: DMatrix<f64>,
    /// K×M source heads.
    pub w_hat: DMatrix<f64>,
    /// Target head; zero until [`LinearModel::set_target_head`] is called.
    pub w_target_hat: DVector<f64>,
    /// Joint objective after the initial W-step and after every accepted
    /// iteration. Non-increasing.
    pub objective_trace: Vec<f64>,
    /// `Σ_m ‖X_m B̂ ŵ_m − Y_m‖²` at the returned iterate.
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

impl LinearModel {
    pub fn set_target_head(&mut self, w: DVector<f64>) {
        self.w_target_hat = w;
    }

    /// Target predictor in input space, `B̂ ŵ_{M+1}`.
    pub fn target_coefficient(&self) -> DVector<f64> {
        &self.b_hat * &self.w_target_hat
    }

    /// Source predictors in input space, `B̂ Ŵ`.
    pub fn source_coefficients(&self) -> DMatrix<f64> {
        &self.b_hat * &self.w_hat
    }

    pub fn predict_target(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * self.target_coefficient()
    }
}

/// A length-M relevance vector (`ν*` or an estimate `ν̂`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub values: Vec<f64>,
    norm2: f64,
    /// Set when the relevance was computed from an all-zero head matrix.
    pub degenerate: bool,
    /// Numerical rank of the head matrix used (0 when constructed directly).
    pub rank: usize,
}

impl RelevanceVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm2 = values.iter().map(|v| v * v).sum();
        RelevanceVector { values, norm2, degenerate: false, rank: 0 }
    }

    /// `[1/M, …, 1/M]`.
    pub fn uniform(m: usize) -> Self {
        Self::new(vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Squared Euclidean norm.
    pub fn norm2(&self) -> f64 {
        self.norm2
    }

    pub fn norm(&self) -> f64 {
        self.norm2.sqrt()
    }

    /// Zero-based indices of entries with `|ν_m| > threshold`.
    pub fn support(&self, threshold: f64) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > threshold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

/// Minimum-norm `ν` with `W ν = Π(w)`, where `Π` projects onto the column
/// space of `W`; computed as `W⁺ w` by SVD.
///
/// Singular values at or below `rcond · σ_max` are dropped. An all-zero `W`
/// yields the zero vector with [`RelevanceVector::degenerate`] set.
pub fn min_norm_combination(w_mat: &DMatrix<f64>, w: &DVector<f64>, rcond: Option<f64>) -> RelevanceVector {
    let m = w_mat.ncols();
    if w_mat.iter().all(|&v| v == 0.0) || w.len() != w_mat.nrows() {
        let mut nu = RelevanceVector::new(vec![0.0; m]);
        nu.degenerate = true;
        return nu;
    }
    match linalg::pinv_solve(w_mat, w, rcond) {
        Ok((x, rank)) => {
            let mut nu = RelevanceVector::new(x.iter().copied().collect());
            nu.rank = rank;
            nu
        }
        Err(_) => {
            let mut nu = RelevanceVector::new(vec![0.0; m]);
            nu.degenerate = true;
            nu
        }
    }
}

/// Thin QR `B = QR` with positive `diag(R)`, returning `(Q, RW)` so that
/// `Q (RW) = BW` and `QᵀQ = I`.
pub fn orthonormalize(b: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if b.ncols() != w.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "B has {} columns but W has {} rows",
            b.ncols(),
            w.nrows()
        )));
    }
    if b.ncols() > b.nrows() {
        return Err(Error::RankDeficient);
    }
    let (q, r) = linalg::thin_qr_positive(b)?;
    Ok((q, r * w))
}

/// Sine of the largest principal angle between the column spaces of two
/// orthonormal d×K matrices, `‖(I − B₁B₁ᵀ)B₂‖₂`.
pub fn subspace_distance(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> Result<f64> {
    if b1.nrows() != b2.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "ambient dimensions {} and {} differ",
            b1.nrows(),
            b2.nrows()
        )));
    }
    for b in [b1, b2] {
        let dev = linalg::orthonormality_error(b);
        if dev > 1e-6 {
            return Err(Error::NotOrthonormal(dev));
        }
    }
    let residual = b2 - b1 * (b1.transpose() * b2);
    Ok(linalg::spectral_norm(&residual).clamp(0.0, 1.0))
}

/// Minimum-norm least-squares head `argmin_w ‖X B̂ w − Y‖²` on the target batch.
pub fn fit_target_head(b_hat: &DMatrix<f64>, target: &SampleBatch, config: &SolverConfig) -> Result<DVector<f64>> {
    if target.is_empty() {
        return Err(Error::EmptyBatch(target.task));
    }
    if target.dim() != b_hat.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "target inputs have dimension {} but B̂ has {} rows",
            target.dim(),
            b_hat.nrows()
        )));
    }
    let z = &target.x * b_hat;
    linalg::pinv_solve(&z, &target.y, config.pinv_rcond).map(|(w, _)| w)
}

/// Sufficient statistics of one task's batch.
struct TaskStats<'a> {
    batch: &'a SampleBatch,
    xty: DVector<f64>,
    gram: Option<DMatrix<f64>>,
}

impl<'a> TaskStats<'a> {
    fn new(batch: &'a SampleBatch, with_gram: bool) -> Self {
        let xty = batch.x.tr_mul(&batch.y);
        let gram = with_gram.then(|| batch.x.tr_mul(&batch.x));
        TaskStats { batch, xty, gram }
    }

    fn n(&self) -> usize {
        self.batch.len()
    }

    /// `(Bᵀ XᵀX B, Bᵀ Xᵀy)`.
    fn projected(&self, b: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let rhs = b.tr_mul(&self.xty);
        let lhs = match &self.gram {
            Some(g) => b.tr_mul(&(g * b)),
            None => {
                let z = &self.batch.x * b;
                z.tr_mul(&z)
            }
        };
        (lhs, rhs)
    }

    /// `XᵀX v`.
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.gram {
            Some(g) => g * v,
            None => self.batch.x.tr_mul(&(&self.batch.x * v)),
        }
    }

    fn diag_gram(&self) -> DVector<f64> {
        match &self.gram {
            Some(g) => g.diagonal(),
            None => DVector::from_fn(self.batch.dim(), |j, _| self.batch.x.column(j).norm_squared()),
        }
    }

    /// `‖X (B w) − y‖²`, evaluated on the residual.
    fn objective(&self, b: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
        let coef = b * w;
        (&self.batch.x * coef - &self.batch.y).norm_squared()
    }
}

fn joint_objective(stats: &[TaskStats<'_>], b: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    stats
        .iter()
        .enumerate()
        .map(|(m, s)| s.objective(b, &w.column(m).into_owned()))
        .sum()
}

fn w_step(stats: &[TaskStats<'_>], b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = b.ncols();
    let mut w = DMatrix::zeros(k, stats.len());
    for (m, s) in stats.iter().enumerate() {
        let (lhs, rhs) = s.projected(b);
        let head = linalg::spd_solve(&lhs, &rhs)?;
        if head.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite head for task {}", m + 1)));
        }
        w.set_column(m, &head);
    }
    Ok(w)
}

fn b_step_dense(stats: &[TaskStats<'_>], w: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let k = w.nrows();
    let mut a = DMatrix::zeros(d * k, d * k);
    let mut rhs = DVector::zeros(d * k);
    for (m, s) in stats.iter().enumerate() {
        let g = s.gram.as_ref().expect("dense B-step requires cached Gram matrices");
        for p in 0..k {
            let wp = w[(p, m)];
            if wp == 0.0 {
                continue;
            }
            rhs.rows_mut(p * d, d).axpy(wp, &s.xty, 1.0);
            for q in 0..k {
                let wq = w[(q, m)];
                if wq == 0.0 {
                    continue;
                }
                let mut block = a.view_mut((p * d, q * d), (d, d));
                block.zip_apply(g, |dst, src| *dst += wp * wq * src);
            }
        }
    }
    let x = linalg::spd_solve(&a, &rhs)?;
    Ok(DMatrix::from_column_slice(d, k, x.as_slice()))
}

/// Preconditioned conjugate gradients on the B-step normal equations, with
/// the Kronecker preconditioner `diag(Σ XᵀX) ⊗ Σ n_m w_m w_mᵀ`.
fn b_step_pcg(stats: &[TaskStats<'_>], w: &DMatrix<f64>, start: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, k) = start.shape();
    let apply = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(d, k);
        for (m, s) in stats.iter().enumerate() {
            let wm = w.column(m).into_owned();
            let g = s.apply(&(v * &wm));
            out.ger(1.0, &g, &wm, 1.0);
        }
        out
    };
    let mut rhs = DMatrix::zeros(d, k);
    let mut diag = DVector::zeros(d);
    let mut cross = DMatrix::zeros(k, k);
    for (m, s) in stats.iter().enumerate() {
        let wm = w.column(m).into_owned();
        rhs.ger(1.0, &s.xty, &wm, 1.0);
        diag += s.diag_gram();
        cross.ger(s.n() as f64, &wm, &wm, 1.0);
    }
    let diag_inv = diag.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
    let cross_inv = cross
        .svd(true, true)
        .pseudo_inverse(f64::EPSILON * k as f64)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let precond = |r: &DMatrix<f64>| -> DMatrix<f64> {
        let mut z = r * &cross_inv;
        for (j, mut row) in z.row_iter_mut().enumerate() {
            row *= diag_inv[j];
        }
        z
    };

    let rhs_norm = rhs.norm();
    let mut x = start.clone();
    if rhs_norm == 0.0 {
        return Ok(DMatrix::zeros(d, k));
    }
    let mut r = &rhs - apply(&x);
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..PCG_MAX_ITERS {
        if r.norm() <= PCG_REL_TOL * rhs_norm {
            break;
        }
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        x += &p * alpha;
        r -= &ap * alpha;
        z = precond(&r);
        let rz_next = r.dot(&z);
        if rz == 0.0 {
            break;
        }
        let beta = rz_next / rz;
        p = &z + beta * &p;
        rz = rz_next;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("B-step produced non-finite values".into()));
    }
    Ok(x)
}

fn initial_representation(stats: &[TaskStats<'_>], dims: ProblemDims, config: &SolverConfig) -> Result<DMatrix<f64>> {
    let ProblemDims { d, k, m } = dims;
    match config.init_mode {
        InitMode::RandomOrthonormal => {
            let mut rng = RngStream::new(config.seed, 0, u32::MAX).rng();
            Ok(linalg::random_orthonormal(&mut rng, d, k))
        }
        InitMode::SvdOfTaskEstimates => {
            let mut estimates = DMatrix::zeros(d, m);
            for (j, s) in stats.iter().enumerate() {
                let n = s.n() as f64;
                let theta = match &s.gram {
                    Some(g) => {
                        let mut reg = g.clone();
                        for i in 0..d {
                            reg[(i, i)] += 1e-6 * n;
                        }
                        linalg::spd_solve(&reg, &s.xty)?
                    }
                    // moment estimate E[xy] = B w under identity covariance
                    None => &s.xty / n,
                };
                estimates.set_column(j, &theta);
            }
            let u = linalg::top_left_singular_vectors(&estimates, k)?;
            // SVD vectors can drift slightly off orthonormal; tidy up.
            let (q, _) = orthonormalize(&u, &DMatrix::identity(k, k))?;
            Ok(q)
        }
    }
}

/// Fits `(B̂, Ŵ)` to M source batches (tasks `1..=M`, in order) by
/// alternating minimization. The target head of the returned model is zero.
pub fn fit_joint_erm(batches: &[SampleBatch], dims: ProblemDims, config: &SolverConfig) -> Result<LinearModel> {
    dims.validate()?;
    config.validate()?;
    let ProblemDims { d, k, m } = dims;
    if batches.len() != m {
        return Err(Error::DimensionMismatch(format!("expected {m} source batches, got {}", batches.len())));
    }
    for (i, b) in batches.iter().enumerate() {
        if b.task != i + 1 {
            return Err(Error::InvalidArgument(format!("batch {} holds task {}", i + 1, b.task)));
        }
        if b.is_empty() {
            return Err(Error::EmptyBatch(b.task));
        }
        if b.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "task {} has input dimension {}, expected {d}",
                b.task,
                b.dim()
            )));
        }
    }

    let with_gram = d <= GRAM_MAX_DIM;
    let dense = with_gram && d * k <= DENSE_B_STEP_MAX;
    let stats: Vec<TaskStats<'_>> = batches.iter().map(|b| TaskStats::new(b, with_gram)).collect();

    let mut b = initial_representation(&stats, dims, config)?;
    let mut w = w_step(&stats, &b)?;
    let mut objective = joint_objective(&stats, &b, &w);
    let mut trace = vec![objective];
    let mut iterations = 0;
    let mut stop = StopReason::MaxIters;

    while iterations < config.max_altmin_iters {
        if objective == 0.0 {
            stop = StopReason::Converged;
            break;
        }
        let b_raw = if dense { b_step_dense(&stats, &w, d)? } else { b_step_pcg(&stats, &w, &b)? };
        let Ok((q, _)) = orthonormalize(&b_raw, &w) else {
            debug!("B-step lost rank after {iterations} iterations");
            stop = StopReason::Stalled;
            break;
        };
        let w_next = w_step(&stats, &q)?;
        let next = joint_objective(&stats, &q, &w_next);
        if !(next <= objective) {
            stop = StopReason::Stalled;
            break;
        }
        let rel = (objective - next) / objective;
        b = q;
        w = w_next;
        objective = next;
        trace.push(objective);
        iterations += 1;
        if rel < config.rel_objective_tol {
            stop = StopReason::Converged;
            break;
        }
    }
    debug!("altmin stopped after {iterations} iterations ({stop:?}), objective {objective:e}");

    Ok(LinearModel {
        b_hat: b,
        w_hat: w,
        w_target_hat: DVector::zeros(k),
        objective_trace: trace,
        objective,
        iterations,
        stop,
    })
}
