//! Problem dimensions, synthetic ground truth and seeded sampling oracles.
//!
//! Tasks are 1-indexed: source tasks are `1..=M` and the target is `M + 1`.
//! Inputs are standard normal (identity covariance), outputs follow
//! `y = xᵀ B* w*_task + z` with `z ~ N(0, σ²)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::solver::{self, RelevanceVector};

/// Input dimension `d`, representation dimension `k` and source task count `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDims {
    pub d: usize,
    pub k: usize,
    pub m: usize,
}

impl ProblemDims {
    pub fn new(d: usize, k: usize, m: usize) -> Result<Self> {
        let dims = ProblemDims { d, k, m };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.m == 0 {
            return Err(Error::InvalidDims(format!(
                "d, k and m must be positive (got d={}, k={}, m={})",
                self.d, self.k, self.m
            )));
        }
        if self.k > self.d {
            return Err(Error::InvalidDims(format!("k={} exceeds d={}", self.k, self.d)));
        }
        if self.m < self.k {
            return Err(Error::InvalidDims(format!(
                "m={} is smaller than k={}; source heads cannot span the representation",
                self.m, self.k
            )));
        }
        Ok(())
    }

    /// Id of the target task.
    pub fn target_task(&self) -> usize {
        self.m + 1
    }
}

/// Counter-based random stream keyed by `(task, epoch)` under a master seed.
///
/// Streams never overlap, so draws for one task cannot perturb another, and
/// the same key always reproduces the same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub task: u32,
    pub epoch: u32,
}

impl RngStream {
    pub fn new(master_seed: u64, task: usize, epoch: u32) -> Self {
        RngStream { master_seed, task: task as u32, epoch }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(((self.task as u64) << 32) | self.epoch as u64);
        rng
    }
}

// Task id 0 is never sampled; its streams are reserved for constructing
// environments.
const CONSTRUCTION_TASK: usize = 0;

/// Hidden parameters of a synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dims: ProblemDims,
    /// d×K orthonormal representation.
    pub b_star: DMatrix<f64>,
    /// K×M source heads, one column per task.
    pub w_star: DMatrix<f64>,
    /// Target head `w*_{M+1}`.
    pub w_target: DVector<f64>,
    pub sigma: f64,
    /// `max_m ‖w*_m‖₂`.
    pub head_norm_bound: f64,
    /// `σ_K(W*)`, the smallest of its K singular values.
    pub sigma_min_w: f64,
}

impl GroundTruth {
    /// Assembles a ground truth and checks its invariants.
    pub fn new(
        dims: ProblemDims,
        b_star: DMatrix<f64>,
        w_star: DMatrix<f64>,
        w_target: DVector<f64>,
        sigma: f64,
    ) -> Result<Self> {
        dims.validate()?;
        if b_star.shape() != (dims.d, dims.k) || w_star.shape() != (dims.k, dims.m) || w_target.len() != dims.k {
            return Err(Error::DimensionMismatch(format!(
                "expected B* {}x{}, W* {}x{}, target head of length {}",
                dims.d, dims.k, dims.k, dims.m, dims.k
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise level must be finite and nonnegative, got {sigma}")));
        }
        let dev = linalg::orthonormality_error(&b_star);
        if dev > 1e-10 {
            return Err(Error::NotOrthonormal(dev));
        }
        let sigma_min_w = linalg::kth_singular_value(&w_star, dims.k);
        if sigma_min_w <= 0.0 {
            return Err(Error::Construction("W* does not have full row rank".into()));
        }
        let head_norm_bound = w_star.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        Ok(GroundTruth { dims, b_star, w_star, w_target, sigma, head_norm_bound, sigma_min_w })
    }

    /// Head of task `task` (1-based, `M + 1` is the target).
    pub fn head(&self, task: usize) -> Result<DVector<f64>> {
        let m = self.dims.m;
        match task {
            t if (1..=m).contains(&t) => Ok(self.w_star.column(t - 1).into_owned()),
            t if t == m + 1 => Ok(self.w_target.clone()),
            t => Err(Error::UnknownTask { task: t, max: m + 1 }),
        }
    }

    /// Regression coefficient `B* w*_task` in input space.
    pub fn coefficient(&self, task: usize) -> Result<DVector<f64>> {
        Ok(&self.b_star * self.head(task)?)
    }

    /// True task relevance `ν*`: the minimum-norm `ν` with `W* ν = w*_{M+1}`.
    pub fn nu_star(&self) -> RelevanceVector {
        solver::min_norm_combination(&self.w_star, &self.w_target, None)
    }
}

/// The 1-sparse example: source heads cycle through `e_1..e_{K-1}` and the
/// last source task shares the target head `e_K`, so `ν* = e_M`.
///
/// `B*` is a Haar-random orthonormal matrix drawn from `seed`.
pub fn make_sparse_example(dims: ProblemDims, sigma: f64, seed: u64) -> Result<GroundTruth> {
    dims.validate()?;
    let ProblemDims { d, k, m } = dims;
    if k < 2 {
        return Err(Error::InvalidDims(format!("the sparse example needs k >= 2, got k={k}")));
    }
    let mut rng = RngStream::new(seed, CONSTRUCTION_TASK, 0).rng();
    let b_star = linalg::random_orthonormal(&mut rng, d, k);
    let mut w_star = DMatrix::zeros(k, m);
    for task in 1..m {
        let axis = (task - 1) % (k - 1);
        w_star[(axis, task - 1)] = 1.0;
    }
    w_star[(k - 1, m - 1)] = 1.0;
    let mut w_target = DVector::zeros(k);
    w_target[k - 1] = 1.0;
    GroundTruth::new(dims, b_star, w_star, w_target, sigma)
}

/// A generic environment: heads uniform on the sphere of radius `head_scale`,
/// redrawn until `σ_K(W*) ≥ 0.1·head_scale`, and a target head inside the
/// span of the source heads.
pub fn make_random_environment(dims: ProblemDims, sigma: f64, head_scale: f64, seed: u64) -> Result<GroundTruth> {
    dims.validate()?;
    if !(head_scale > 0.0 && head_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("head_scale must be positive, got {head_scale}")));
    }
    let ProblemDims { d, k, m } = dims;
    let mut rng = RngStream::new(seed, CONSTRUCTION_TASK, 0).rng();
    let b_star = linalg::random_orthonormal(&mut rng, d, k);
    let floor = 0.1 * head_scale;
    for _ in 0..100 {
        let mut w_star = DMatrix::from_fn(k, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut col in w_star.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col *= head_scale / norm;
            }
        }
        if linalg::kth_singular_value(&w_star, k) < floor {
            continue;
        }
        let scale = 1.0 / (m as f64).sqrt();
        let c = DVector::from_fn(m, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let w_target = &w_star * c;
        return GroundTruth::new(dims, b_star, w_star, w_target, sigma);
    }
    Err(Error::Construction(format!(
        "no head matrix with σ_min >= {floor} after 100 redraws"
    )))
}

/// Inputs and outputs for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub task: usize,
    /// n×d inputs, one sample per row.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl SampleBatch {
    pub fn new(task: usize, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows but {} outputs",
                x.nrows(),
                y.len()
            )));
        }
        Ok(SampleBatch { task, x, y })
    }

    pub fn empty(task: usize, d: usize) -> Self {
        SampleBatch { task, x: DMatrix::zeros(0, d), y: DVector::zeros(0) }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Keeps the rows at `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> SampleBatch {
        let d = self.dim();
        let x = DMatrix::from_fn(idx.len(), d, |i, j| self.x[(idx[i], j)]);
        let y = DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]);
        SampleBatch { task: self.task, x, y }
    }
}

/// Draws `n` i.i.d. samples of `task` from `stream`.
///
/// Each row consumes `d` input normals followed by one noise normal, so a
/// longer draw from the same stream extends a shorter one.
pub fn sample_task(env: &GroundTruth, task: usize, n: usize, stream: RngStream) -> Result<SampleBatch> {
    let coef = env.coefficient(task)?;
    let d = env.dims.d;
    let mut rng = stream.rng();
    let mut xs = Vec::with_capacity(n * d);
    let mut noise = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..d {
            xs.push(rng.sample::<f64, _>(StandardNormal));
        }
        noise.push(rng.sample::<f64, _>(StandardNormal));
    }
    let x = DMatrix::from_row_slice(n, d, &xs);
    let mut y = &x * &coef;
    for (yi, zi) in y.iter_mut().zip(&noise) {
        *yi += env.sigma * zi;
    }
    SampleBatch::new(task, x, y)
}

/// Row-stacks `b` under `a`.
pub fn concat_batches(a: &SampleBatch, b: &SampleBatch) -> Result<SampleBatch> {
    if a.task != b.task {
        return Err(Error::TaskMismatch(a.task, b.task));
    }
    if b.is_empty() {
        return Ok(a.clone());
    }
    if a.is_empty() {
        return Ok(b.clone());
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "batches have input dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb, d) = (a.len(), b.len(), a.dim());
    let mut x = DMatrix::zeros(na + nb, d);
    x.rows_mut(0, na).copy_from(&a.x);
    x.rows_mut(na, nb).copy_from(&b.x);
    let mut y = DVector::zeros(na + nb);
    y.rows_mut(0, na).copy_from(&a.y);
    y.rows_mut(na, nb).copy_from(&b.y);
    SampleBatch::new(a.task, x, y)
}

/// Anything the training loops can draw source samples from.
pub trait TaskSource {
    /// Dimensions of the problem (`k` is the representation size to fit).
    fn dims(&self) -> ProblemDims;

    /// Draws `n` fresh samples of source task `task` for epoch `epoch`.
    fn draw(&mut self, task: usize, n: usize, epoch: u32) -> Result<SampleBatch>;

    /// The fixed target-task samples.
    fn target(&self) -> &SampleBatch;

    /// Hidden parameters, when the source is synthetic.
    fn truth(&self) -> Option<&GroundTruth> {
        None
    }

    /// Total number of source samples handed out so far.
    fn drawn(&self) -> usize;
}

/// Sampling oracle over a synthetic [`GroundTruth`].
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    truth: GroundTruth,
    seed: u64,
    target: SampleBatch,
    drawn: usize,
}

impl SyntheticSource {
    /// Freezes `n_target` target samples drawn from stream `(M + 1, 0)`.
    pub fn new(truth: GroundTruth, seed: u64, n_target: usize) -> Result<Self> {
        let target_task = truth.dims.target_task();
        let target = sample_task(&truth, target_task, n_target, RngStream::new(seed, target_task, 0))?;
        Ok(SyntheticSource { truth, seed, target, drawn: 0 })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl TaskSource for SyntheticSource {
    fn dims(&self) -> ProblemDims {
        self.truth.dims
    }

    fn draw(&mut self, task: usize, n: usize, epoch: u32) -> Result<SampleBatch> {
        if task == 0 || task > self.truth.dims.m {
            return Err(Error::UnknownTask { task, max: self.truth.dims.m });
        }
        let batch = sample_task(&self.truth, task, n, RngStream::new(self.seed, task, epoch))?;
        self.drawn += n;
        Ok(batch)
    }

    fn target(&self) -> &SampleBatch {
        &self.target
    }

    fn truth(&self) -> Option<&GroundTruth> {
        Some(&self.truth)
    }

    fn drawn(&self) -> usize {
        self.drawn
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(k: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(k);
        v[i - 1] = 1.0;
        v
    }

    #[test]
    fn dims_validation() {
        assert!(ProblemDims::new(10, 3, 5).is_ok());
        assert!(ProblemDims::new(3, 4, 5).is_err());
        assert!(ProblemDims::new(10, 4, 3).is_err());
        assert!(ProblemDims::new(0, 0, 0).is_err());
    }

    #[test]
    fn sparse_example_heads() {
        let truth = make_sparse_example(ProblemDims::new(10, 3, 5).unwrap(), 0.0, 1).unwrap();
        let expected = [1, 2, 1, 2, 3];
        for (m, &axis) in expected.iter().enumerate() {
            assert_eq!(truth.w_star.column(m).into_owned(), e(3, axis));
        }
        assert_eq!(truth.w_target, e(3, 3));
    }

    #[test]
    fn sparse_example_smallest_case() {
        let truth = make_sparse_example(ProblemDims::new(4, 2, 2).unwrap(), 0.0, 1).unwrap();
        assert_eq!(truth.w_star, DMatrix::identity(2, 2));
    }

    #[test]
    fn sparse_example_rejects_k_one() {
        assert!(make_sparse_example(ProblemDims::new(4, 1, 2).unwrap(), 0.0, 1).is_err());
    }

    #[test]
    fn sparse_example_relevance_is_last_basis_vector() {
        for (d, k, m) in [(10, 3, 5), (30, 5, 20), (6, 2, 7), (8, 4, 4)] {
            let truth = make_sparse_example(ProblemDims::new(d, k, m).unwrap(), 0.1, 9).unwrap();
            let nu = truth.nu_star();
            for (i, v) in nu.values.iter().enumerate() {
                let expected = if i == m - 1 { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-10, "{d},{k},{m}: entry {i} = {v}");
            }
        }
    }

    #[test]
    fn random_environment_invariants() {
        let dims = ProblemDims::new(15, 4, 9).unwrap();
        let a = make_random_environment(dims, 0.3, 1.0, 7).unwrap();
        let b = make_random_environment(dims, 0.3, 1.0, 7).unwrap();
        assert_eq!(a, b);
        for col in a.w_star.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
        assert!(a.sigma_min_w >= 0.1);
        assert!(linalg::orthonormality_error(&a.b_star) < 1e-10);
        // realizable target
        let nu = a.nu_star();
        let recon = &a.w_star * DVector::from_vec(nu.values.clone());
        assert!((recon - &a.w_target).norm() < 1e-10);
    }

    #[test]
    fn noiseless_samples_are_exact() {
        let truth = make_sparse_example(ProblemDims::new(10, 3, 5).unwrap(), 0.0, 2).unwrap();
        for task in 1..=6 {
            let batch = sample_task(&truth, task, 25, RngStream::new(4, task, 1)).unwrap();
            let pred = &batch.x * truth.coefficient(task).unwrap();
            assert_eq!((pred - &batch.y).amax(), 0.0);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_consistent() {
        let truth = make_sparse_example(ProblemDims::new(8, 2, 3).unwrap(), 0.5, 2).unwrap();
        let s = RngStream::new(11, 2, 3);
        let a = sample_task(&truth, 2, 40, s).unwrap();
        let b = sample_task(&truth, 2, 40, s).unwrap();
        assert_eq!(a, b);
        let short = sample_task(&truth, 2, 15, s).unwrap();
        assert_eq!(short.x, a.x.rows(0, 15).into_owned());
        let other = sample_task(&truth, 2, 40, RngStream::new(11, 2, 4)).unwrap();
        assert_ne!(a.x, other.x);
    }

    #[test]
    fn empty_and_unknown_tasks() {
        let truth = make_sparse_example(ProblemDims::new(8, 2, 3).unwrap(), 0.5, 2).unwrap();
        let empty = sample_task(&truth, 1, 0, RngStream::new(0, 1, 0)).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.dim(), 8);
        assert!(matches!(
            sample_task(&truth, 5, 3, RngStream::new(0, 5, 0)),
            Err(Error::UnknownTask { task: 5, max: 4 })
        ));
        assert!(sample_task(&truth, 0, 3, RngStream::new(0, 0, 0)).is_err());
    }

    #[test]
    fn second_moment_matches_head_norm_plus_noise() {
        // E[y²] = ‖B* w‖² + σ²; checked within 3 standard errors.
        let truth = make_random_environment(ProblemDims::new(6, 2, 3).unwrap(), 0.7, 1.3, 5).unwrap();
        let n = 100_000;
        let batch = sample_task(&truth, 1, n, RngStream::new(21, 1, 0)).unwrap();
        let sq: Vec<f64> = batch.y.iter().map(|v| v * v).collect();
        let mean = sq.iter().sum::<f64>() / n as f64;
        let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expected = truth.head(1).unwrap().norm_squared() + 0.49;
        assert!((mean - expected).abs() <= 3.0 * se, "mean {mean} expected {expected} se {se}");
    }

    #[test]
    fn concat_rules() {
        let truth = make_sparse_example(ProblemDims::new(5, 2, 3).unwrap(), 0.1, 2).unwrap();
        let a = sample_task(&truth, 1, 3, RngStream::new(1, 1, 0)).unwrap();
        let b = sample_task(&truth, 1, 2, RngStream::new(1, 1, 1)).unwrap();
        let c = sample_task(&truth, 1, 4, RngStream::new(1, 1, 2)).unwrap();
        let ab = concat_batches(&a, &b).unwrap();
        assert_eq!(ab.len(), 5);
        assert_eq!(ab.x.rows(3, 2).into_owned(), b.x);
        assert_eq!(concat_batches(&a, &SampleBatch::empty(1, 5)).unwrap(), a);
        let left = concat_batches(&ab, &c).unwrap();
        let right = concat_batches(&a, &concat_batches(&b, &c).unwrap()).unwrap();
        assert_eq!(left, right);
        let other = sample_task(&truth, 2, 2, RngStream::new(1, 2, 0)).unwrap();
        assert!(matches!(concat_batches(&a, &other), Err(Error::TaskMismatch(1, 2))));
    }

    #[test]
    fn synthetic_source_counts_draws() {
        let truth = make_sparse_example(ProblemDims::new(5, 2, 3).unwrap(), 0.1, 2).unwrap();
        let mut src = SyntheticSource::new(truth, 3, 20).unwrap();
        assert_eq!(src.target().len(), 20);
        assert_eq!(src.target().task, 4);
        src.draw(1, 7, 1).unwrap();
        src.draw(3, 5, 1).unwrap();
        assert_eq!(src.drawn(), 12);
        assert!(src.draw(4, 1, 1).is_err());
    }
}
