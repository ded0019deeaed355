//! Source-sample allocation and the three training loops: known relevance,
//! active relevance estimation, and the uniform baseline.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::env::{concat_batches, SampleBatch, TaskSource};
use crate::error::{Error, Result};
use crate::eval;
use crate::solver::{self, LinearModel, RelevanceVector, SolverConfig, StopReason};

/// Default cap on the total allocation of a single epoch.
pub const DEFAULT_HARD_CAP: usize = 1_000_000;

/// Rounds a nonnegative allocation up, treating values within 1e-9
/// (relative) of an integer as that integer so float noise such as
/// `90.00000000000001` does not cost an extra sample.
pub fn ceil_count(x: f64) -> usize {
    if !(x > 0.0) {
        return 0;
    }
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Samples per source task for one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub n: Vec<usize>,
    /// Whether the floor, rather than the relevance-proportional term, set `n_m`.
    pub floor_applied: Vec<bool>,
}

impl AllocationPlan {
    pub fn total(&self) -> usize {
        self.n.iter().sum()
    }
}

/// Known-relevance allocation:
/// `n_m = ⌈max{(N_total − M·N_floor) ν*(m)²/‖ν*‖², N_floor}⌉`.
pub fn allocate_known(nu_star: &RelevanceVector, n_total: usize, n_floor: usize) -> Result<AllocationPlan> {
    let m = nu_star.len();
    if m == 0 || nu_star.norm2() == 0.0 {
        return Err(Error::InvalidArgument("relevance vector must be nonzero".into()));
    }
    let reserved = m * n_floor;
    if n_total <= reserved {
        return Err(Error::Budget(format!(
            "N_total={n_total} does not exceed M·N_floor={m}·{n_floor}={reserved}"
        )));
    }
    let spare = (n_total - reserved) as f64;
    let mut plan = AllocationPlan { n: Vec::with_capacity(m), floor_applied: Vec::with_capacity(m) };
    for v in &nu_star.values {
        let share = spare * v * v / nu_star.norm2();
        let floored = share < n_floor as f64;
        plan.n.push(if floored { n_floor } else { ceil_count(share) });
        plan.floor_applied.push(floored);
    }
    Ok(plan)
}

/// Active allocation: `n_m = ⌈max{β ν̂(m)² ε⁻², β ε⁻¹}⌉`.
pub fn allocate_active(nu_hat: &RelevanceVector, beta: f64, epsilon: f64) -> Result<AllocationPlan> {
    allocate_with_floor(nu_hat, beta, epsilon, beta / epsilon)
}

/// [`allocate_active`] with an explicit per-task floor in place of `β ε⁻¹`.
pub fn allocate_with_floor(nu_hat: &RelevanceVector, beta: f64, epsilon: f64, floor: f64) -> Result<AllocationPlan> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let mut plan = AllocationPlan { n: Vec::new(), floor_applied: Vec::new() };
    for v in &nu_hat.values {
        let proportional = beta * v * v / (epsilon * epsilon);
        let floored = proportional < floor;
        plan.n.push(ceil_count(proportional.max(floor)).max(1));
        plan.floor_applied.push(floored);
    }
    Ok(plan)
}

/// `ln(max(x, e))`: every log argument is clamped so the term contributes at
/// least 1.
fn clamped_ln(x: f64) -> f64 {
    x.max(std::f64::consts::E).ln()
}

/// Theory-preset β:
/// `3000 K² R² (KM + Kd log(N/(εM)) + log(M log(1/N) / (δ/10))) / σ̲⁶`.
///
/// As printed, `log(1/N)` is negative for `N > 1`; every log argument is
/// clamped below at `e`, which makes the last term `log(M/(δ/10))` for any
/// realistic budget.
#[allow(clippy::too_many_arguments)]
pub fn beta_theory(k: usize, r: f64, m: usize, d: usize, n_total: f64, epsilon: f64, delta: f64, sigma_lower: f64) -> Result<f64> {
    for (name, v) in [("R", r), ("N_total", n_total), ("epsilon", epsilon), ("delta", delta), ("sigma_lower", sigma_lower)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    if sigma_lower > 1.0 {
        return Err(Error::InvalidArgument(format!("sigma_lower must lie in (0, 1], got {sigma_lower}")));
    }
    if k == 0 || m == 0 || d == 0 {
        return Err(Error::InvalidArgument("K, M and d must be positive".into()));
    }
    let (kf, mf, df) = (k as f64, m as f64, d as f64);
    let inner = clamped_ln(1.0 / n_total);
    let bracket = kf * mf + kf * df * clamped_ln(n_total / (epsilon * mf)) + clamped_ln(mf * inner / (delta / 10.0));
    Ok(3000.0 * kf * kf * r * r * bracket / sigma_lower.powi(6))
}

/// Suggested epoch count `⌊log_b √(N_total / (β‖ν‖²))⌋` (at least 1) for an
/// ε schedule with base `b`.
pub fn suggested_num_epochs(n_total: f64, beta: f64, nu_norm2: f64, epsilon_base: f64) -> usize {
    let ratio = n_total / (beta * nu_norm2);
    if !(ratio > 1.0) || !(epsilon_base > 1.0) {
        return 1;
    }
    ((ratio.sqrt().ln() / epsilon_base.ln()).floor() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Theory,
    PaperExperiment,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaRule {
    /// `β_i = 1/‖ν̂_i‖²`.
    InverseNuNorm,
    Constant(f64),
}

/// `ε_i = base^{-i}` for `i = start_index, …, start_index + num_epochs − 1`,
/// with β from [`BetaRule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub mode: ScheduleMode,
    pub epsilon_base: f64,
    pub start_index: i32,
    pub num_epochs: usize,
    pub beta: BetaRule,
}

impl EpochSchedule {
    /// Start index used by the practical preset. Desk-scale problems start at
    /// `i = 1`; see the README for why the index is not larger.
    pub const PAPER_EXPERIMENT_START: i32 = 1;

    /// `ε_i = 2^{-i}` from `i = 1` with a constant β (normally [`beta_theory`]).
    pub fn theory(num_epochs: usize, beta: f64) -> Self {
        EpochSchedule {
            mode: ScheduleMode::Theory,
            epsilon_base: 2.0,
            start_index: 1,
            num_epochs,
            beta: BetaRule::Constant(beta),
        }
    }

    /// `ε_i = 1.5^{-i}` with `β_i = 1/‖ν̂_i‖²`.
    pub fn paper_experiment(num_epochs: usize) -> Self {
        EpochSchedule {
            mode: ScheduleMode::PaperExperiment,
            epsilon_base: 1.5,
            start_index: Self::PAPER_EXPERIMENT_START,
            num_epochs,
            beta: BetaRule::InverseNuNorm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_base > 1.0 && self.epsilon_base.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon_base must exceed 1 so ε_i is strictly decreasing, got {}",
                self.epsilon_base
            )));
        }
        if self.start_index < 1 {
            return Err(Error::InvalidArgument(format!(
                "start_index must be at least 1 so that ε < 1, got {}",
                self.start_index
            )));
        }
        if self.num_epochs == 0 {
            return Err(Error::InvalidArgument("num_epochs must be at least 1".into()));
        }
        if let BetaRule::Constant(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidArgument(format!("beta must be positive, got {b}")));
            }
        }
        Ok(())
    }

    pub fn epsilon(&self, index: i32) -> f64 {
        self.epsilon_base.powi(-index)
    }

    /// β for an epoch whose allocation is driven by `nu_hat`.
    pub fn beta_for(&self, nu_hat: &RelevanceVector) -> f64 {
        match self.beta {
            BetaRule::Constant(b) => b,
            BetaRule::InverseNuNorm if nu_hat.norm2() > 0.0 => 1.0 / nu_hat.norm2(),
            BetaRule::InverseNuNorm => {
                warn!("relevance estimate is zero; using β = M as for the uniform start");
                nu_hat.len() as f64
            }
        }
    }

    /// Schedule indices `i` of every epoch.
    pub fn indices(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.num_epochs as i32).map(move |j| self.start_index + j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveOptions {
    /// Keep samples from earlier epochs and only draw the shortfall.
    pub reuse: bool,
    /// Lower bound on `σ_min(W*)`; defaults to the true value when known.
    pub sigma_lower: Option<f64>,
    pub hard_cap: usize,
    /// Constant per-task floor replacing `β ε⁻¹`.
    pub floor_override: Option<usize>,
}

impl Default for ActiveOptions {
    fn default() -> Self {
        ActiveOptions { reuse: true, sigma_lower: None, hard_cap: DEFAULT_HARD_CAP, floor_override: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Known,
    Active,
    Uniform,
}

/// One row of a [`RunLog`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch within the run.
    pub epoch: usize,
    /// Schedule index `i` (active runs only).
    pub schedule_index: Option<i32>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub allocation: AllocationPlan,
    /// Samples per task used in this epoch's fit.
    pub samples_held: Vec<usize>,
    pub new_samples: usize,
    /// Cumulative source samples drawn so far.
    pub n_used: usize,
    /// Relevance estimated from this epoch's fit (drives the next epoch).
    pub nu_hat: Vec<f64>,
    /// Analytic excess risk when the ground truth is known.
    pub excess_risk: Option<f64>,
    pub objective: f64,
    pub altmin_iterations: usize,
    pub stop: StopReason,
    pub subspace_distance: Option<f64>,
    pub bracket_ok_fraction: Option<f64>,
    pub sigma_min_ok: Option<bool>,
    /// Whether the target sample count met `2000 ε⁻¹ / σ̲⁴`.
    pub target_precondition_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub mode: RunMode,
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn total_epochs(&self) -> usize {
        self.records.len()
    }

    pub fn n_used(&self) -> usize {
        self.records.last().map_or(0, |r| r.n_used)
    }

    pub fn final_excess_risk(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.excess_risk)
    }

    /// Cumulative source samples at the first epoch whose excess risk is at
    /// most `threshold`.
    pub fn first_reach(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.excess_risk.is_some_and(|e| e <= threshold))
            .map(|r| r.n_used)
    }
}

/// Fits source batches and then the target head.
fn fit_round(source: &dyn TaskSource, batches: &[SampleBatch], config: &SolverConfig) -> Result<LinearModel> {
    let mut model = solver::fit_joint_erm(batches, source.dims(), config)?;
    let head = solver::fit_target_head(&model.b_hat, source.target(), config)?;
    model.set_target_head(head);
    Ok(model)
}

struct Diagnostics {
    excess_risk: Option<f64>,
    subspace_distance: Option<f64>,
    sigma_min_ok: Option<bool>,
}

fn diagnostics(source: &dyn TaskSource, model: &LinearModel) -> Result<Diagnostics> {
    match source.truth() {
        Some(truth) => Ok(Diagnostics {
            excess_risk: Some(eval::excess_risk_analytic(model, truth)?),
            subspace_distance: solver::subspace_distance(&model.b_hat, &truth.b_star).ok(),
            sigma_min_ok: Some(eval::check_sigma_min(&model.w_hat, &model.b_hat, truth.sigma_min_w)),
        }),
        None => Ok(Diagnostics { excess_risk: None, subspace_distance: None, sigma_min_ok: None }),
    }
}

fn draw_plan(source: &mut dyn TaskSource, plan: &AllocationPlan, epoch: u32) -> Result<Vec<SampleBatch>> {
    plan.n
        .iter()
        .enumerate()
        .map(|(i, &n)| source.draw(i + 1, n, epoch))
        .collect()
}

fn single_round(source: &mut dyn TaskSource, plan: AllocationPlan, mode: RunMode, config: &SolverConfig) -> Result<(LinearModel, RunLog)> {
    let before = source.drawn();
    let batches = draw_plan(source, &plan, 1)?;
    let new_samples = source.drawn() - before;
    let model = fit_round(source, &batches, config)?;
    let nu_hat = solver::min_norm_combination(&model.w_hat, &model.w_target_hat, config.pinv_rcond);
    let diag = diagnostics(source, &model)?;
    let record = EpochRecord {
        epoch: 1,
        schedule_index: None,
        epsilon: None,
        beta: None,
        samples_held: plan.n.clone(),
        allocation: plan,
        new_samples,
        n_used: new_samples,
        nu_hat: nu_hat.values,
        excess_risk: diag.excess_risk,
        objective: model.objective,
        altmin_iterations: model.iterations,
        stop: model.stop,
        subspace_distance: diag.subspace_distance,
        bracket_ok_fraction: None,
        sigma_min_ok: diag.sigma_min_ok,
        target_precondition_ok: None,
    };
    Ok((model, RunLog { mode, records: vec![record] }))
}

/// Known-relevance floor `⌈Kd + ln(M/δ)⌉`.
pub fn known_floor(k: usize, d: usize, m: usize, delta: f64) -> usize {
    ceil_count((k * d) as f64 + (m as f64 / delta).ln().max(0.0))
}

/// One round with the allocation proportional to the known `ν*²`.
pub fn run_known(
    source: &mut dyn TaskSource,
    nu_star: &RelevanceVector,
    n_total: usize,
    delta: f64,
    floor_override: Option<usize>,
    config: &SolverConfig,
) -> Result<(LinearModel, RunLog)> {
    let dims = source.dims();
    if nu_star.len() != dims.m {
        return Err(Error::DimensionMismatch(format!("ν* has {} entries for {} tasks", nu_star.len(), dims.m)));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let floor = match floor_override {
        Some(f) => {
            warn!("known-relevance floor overridden to {f} (rule gives {})", known_floor(dims.k, dims.d, dims.m, delta));
            f.max(1)
        }
        None => known_floor(dims.k, dims.d, dims.m, delta),
    };
    let plan = allocate_known(nu_star, n_total, floor)?;
    single_round(source, plan, RunMode::Known, config)
}

/// Uniform baseline: `⌊N_total/M⌋` per task, remainder to the lowest ids.
pub fn uniform_plan(n_total: usize, m: usize) -> Result<AllocationPlan> {
    if m == 0 || n_total < m {
        return Err(Error::Budget(format!("N_total={n_total} is below M={m}")));
    }
    let base = n_total / m;
    let extra = n_total % m;
    Ok(AllocationPlan { n: (0..m).map(|i| base + usize::from(i < extra)).collect(), floor_applied: vec![false; m] })
}

pub fn run_uniform(source: &mut dyn TaskSource, n_total: usize, config: &SolverConfig) -> Result<(LinearModel, RunLog)> {
    let plan = uniform_plan(n_total, source.dims().m)?;
    single_round(source, plan, RunMode::Uniform, config)
}

/// Active task-relevance sampling.
///
/// Starting from `ν̂₁ = 1/M`, every epoch allocates with
/// [`allocate_active`], draws the samples (topping up earlier ones when
/// `reuse` is set, fresh otherwise), refits, and re-estimates `ν̂` as the
/// minimum-norm combination of the fitted source heads giving the target head.
pub fn run_active(
    source: &mut dyn TaskSource,
    schedule: &EpochSchedule,
    config: &SolverConfig,
    options: &ActiveOptions,
) -> Result<(LinearModel, RunLog)> {
    schedule.validate()?;
    config.validate()?;
    let dims = source.dims();
    let m = dims.m;
    let d = source.target().dim();
    let nu_star = source.truth().map(|t| t.nu_star());
    let noise = source.truth().map(|t| t.sigma);
    let sigma_lower = options.sigma_lower.or_else(|| source.truth().map(|t| t.sigma_min_w));
    let n_target = source.target().len();

    let mut nu_hat = RelevanceVector::uniform(m);
    let mut held: Vec<SampleBatch> = (1..=m).map(|t| SampleBatch::empty(t, d)).collect();
    let mut records = Vec::with_capacity(schedule.num_epochs);
    let mut model = None;
    let start_drawn = source.drawn();

    for (j, index) in schedule.indices().enumerate() {
        let epoch = j + 1;
        let epsilon = schedule.epsilon(index);
        let beta = schedule.beta_for(&nu_hat);
        let plan = match options.floor_override {
            Some(f) => allocate_with_floor(&nu_hat, beta, epsilon, f as f64)?,
            None => allocate_active(&nu_hat, beta, epsilon)?,
        };
        if plan.total() > options.hard_cap {
            return Err(Error::Budget(format!(
                "epoch {epoch} allocates {} samples, above the hard cap of {}",
                plan.total(),
                options.hard_cap
            )));
        }

        let before = source.drawn();
        for (t, slot) in held.iter_mut().enumerate() {
            let want = plan.n[t];
            if options.reuse {
                if want > slot.len() {
                    let extra = source.draw(t + 1, want - slot.len(), epoch as u32)?;
                    *slot = concat_batches(slot, &extra)?;
                }
            } else {
                *slot = source.draw(t + 1, want, epoch as u32)?;
            }
        }
        let new_samples = source.drawn() - before;

        let fitted = fit_round(source, &held, config)?;
        let next = solver::min_norm_combination(&fitted.w_hat, &fitted.w_target_hat, config.pinv_rcond);
        let diag = diagnostics(source, &fitted)?;
        let bracket_ok_fraction = match (&nu_star, noise) {
            (Some(star), Some(sigma)) => Some(eval::check_nu_brackets(&next, star, epsilon, sigma, epoch)?.in_bracket_fraction()),
            _ => None,
        };
        let target_precondition_ok = sigma_lower.map(|s| n_target as f64 >= 2000.0 / (epsilon * s.powi(4)));

        records.push(EpochRecord {
            epoch,
            schedule_index: Some(index),
            epsilon: Some(epsilon),
            beta: Some(beta),
            samples_held: held.iter().map(SampleBatch::len).collect(),
            allocation: plan,
            new_samples,
            n_used: source.drawn() - start_drawn,
            nu_hat: next.values.clone(),
            excess_risk: diag.excess_risk,
            objective: fitted.objective,
            altmin_iterations: fitted.iterations,
            stop: fitted.stop,
            subspace_distance: diag.subspace_distance,
            bracket_ok_fraction,
            sigma_min_ok: diag.sigma_min_ok,
            target_precondition_ok,
        });
        nu_hat = next;
        model = Some(fitted);
    }

    let model = model.expect("schedule has at least one epoch");
    Ok((model, RunLog { mode: RunMode::Active, records }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_sparse_example, ProblemDims, SyntheticSource};

    #[test]
    fn ceil_count_tolerates_float_noise() {
        assert_eq!(ceil_count(90.00000000000001), 90);
        assert_eq!(ceil_count(90.2), 91);
        assert_eq!(ceil_count(0.0), 0);
        assert_eq!(ceil_count(0.3), 1);
    }

    #[test]
    fn known_allocation_examples() {
        let plan = allocate_known(&RelevanceVector::new(vec![1.0, 0.0]), 1000, 10).unwrap();
        assert_eq!(plan.n, vec![980, 10]);
        assert_eq!(plan.floor_applied, vec![false, true]);

        let plan = allocate_known(&RelevanceVector::new(vec![0.3; 10]), 1000, 10).unwrap();
        assert_eq!(plan.n, vec![90; 10]);

        assert!(matches!(allocate_known(&RelevanceVector::new(vec![1.0, 1.0]), 20, 10), Err(Error::Budget(_))));
    }

    #[test]
    fn known_allocation_is_permutation_equivariant() {
        let nu = vec![0.1, -0.7, 0.3, 0.0, 0.5];
        let perm = [3, 0, 4, 1, 2];
        let a = allocate_known(&RelevanceVector::new(nu.clone()), 5000, 12).unwrap();
        let permuted: Vec<f64> = perm.iter().map(|&i| nu[i]).collect();
        let b = allocate_known(&RelevanceVector::new(permuted), 5000, 12).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(b.n[j], a.n[i]);
        }
    }

    #[test]
    fn active_allocation_examples() {
        let plan = allocate_active(&RelevanceVector::new(vec![0.5, 0.1]), 100.0, 0.25).unwrap();
        assert_eq!(plan.n, vec![400, 400]);
        assert_eq!(plan.floor_applied, vec![false, true]);

        let plan = allocate_active(&RelevanceVector::new(vec![0.0; 3]), 7.0, 0.3).unwrap();
        assert_eq!(plan.n, vec![ceil_count(7.0 / 0.3); 3]);
        assert!(plan.floor_applied.iter().all(|&f| f));

        let nu = RelevanceVector::new(vec![0.9, 0.2, 0.05]);
        let one = allocate_active(&nu, 10.0, 0.1).unwrap();
        let two = allocate_active(&nu, 20.0, 0.1).unwrap();
        for (a, b) in one.n.iter().zip(&two.n) {
            assert!(b.abs_diff(2 * a) <= 1);
        }
        assert!(allocate_active(&nu, 0.0, 0.1).is_err());
        assert!(allocate_active(&nu, 1.0, 1.0).is_err());
    }

    #[test]
    fn beta_theory_values() {
        // all logs clamped: 3000·(1·1 + 1·1·1 + 1)
        assert_eq!(beta_theory(1, 1.0, 1, 1, 1.0, 1.0, 10.0, 1.0).unwrap(), 9000.0);
        let a = beta_theory(5, 1.0, 20, 30, 1e5, 0.1, 0.1, 1.0).unwrap();
        let b = beta_theory(5, 1.0, 20, 30, 1e5, 0.1, 0.1, 0.5).unwrap();
        assert!((b / a - 64.0).abs() < 1e-9);
        // independent re-evaluation with K doubled
        let (k, r, m, d, n, eps, delta): (f64, f64, f64, f64, f64, f64, f64) = (10.0, 1.0, 20.0, 30.0, 1e5, 0.1, 0.1);
        let expected = 3000.0 * k * k * r * r * (k * m + k * d * (n / (eps * m)).ln() + (m * 1.0 / (delta / 10.0)).ln());
        let got = beta_theory(10, 1.0, 20, 30, 1e5, 0.1, 0.1, 1.0).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
        assert!(beta_theory(1, 1.0, 1, 1, 1.0, 1.0, 0.1, 1.5).is_err());
    }

    #[test]
    fn suggested_epochs() {
        assert_eq!(suggested_num_epochs(4096.0, 1.0, 1.0, 2.0), 6);
        assert_eq!(suggested_num_epochs(0.5, 1.0, 1.0, 2.0), 1);
    }

    #[test]
    fn schedule_validation_and_values() {
        let s = EpochSchedule::paper_experiment(4);
        s.validate().unwrap();
        assert!((s.epsilon(2) - 1.0 / 2.25).abs() < 1e-15);
        assert!(s.epsilon(3) < s.epsilon(2));
        assert_eq!(s.indices().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!((s.beta_for(&RelevanceVector::uniform(20)) - 20.0).abs() < 1e-12);
        let bad = EpochSchedule { epsilon_base: 1.0, ..s.clone() };
        assert!(bad.validate().is_err());
        let bad = EpochSchedule { start_index: 0, ..s };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn uniform_plans() {
        assert_eq!(uniform_plan(100, 10).unwrap().n, vec![10; 10]);
        let mut expected = vec![10; 10];
        expected[0] = 11;
        assert_eq!(uniform_plan(101, 10).unwrap().n, expected);
        assert!(uniform_plan(9, 10).is_err());
    }

    fn source(sigma: f64, seed: u64) -> SyntheticSource {
        let truth = make_sparse_example(ProblemDims::new(12, 3, 6).unwrap(), sigma, seed).unwrap();
        SyntheticSource::new(truth, seed, 200).unwrap()
    }

    #[test]
    fn known_run_noiseless_is_exact() {
        let mut src = source(0.0, 3);
        let nu = src.truth().unwrap().nu_star();
        let (_, log) = run_known(&mut src, &nu, 2000, 0.1, None, &SolverConfig::default()).unwrap();
        assert!(log.final_excess_risk().unwrap() <= 1e-10);
        assert_eq!(log.n_used(), src.drawn());
        assert_eq!(log.records[0].allocation.n.iter().sum::<usize>(), log.n_used());
    }

    #[test]
    fn first_epoch_is_uniform_and_matches_uniform_run() {
        let mut a = source(0.3, 4);
        let (_, active) = run_active(&mut a, &EpochSchedule::paper_experiment(1), &SolverConfig::default(), &ActiveOptions::default()).unwrap();
        let first = &active.records[0].allocation.n;
        assert!(first.iter().all(|&n| n == first[0]));
        let mut b = source(0.3, 4);
        let (_, uniform) = run_uniform(&mut b, first.iter().sum(), &SolverConfig::default()).unwrap();
        assert_eq!(&uniform.records[0].allocation.n, first);
        assert_eq!(active.records[0].excess_risk, uniform.records[0].excess_risk);
    }

    #[test]
    fn active_run_invariants() {
        let schedule = EpochSchedule::paper_experiment(5);
        let mut src = source(0.2, 5);
        let (_, log) = run_active(&mut src, &schedule, &SolverConfig::default(), &ActiveOptions::default()).unwrap();
        let mut previous = 0;
        let mut total_new = 0;
        let mut nu_prev = RelevanceVector::uniform(6);
        for rec in &log.records {
            let beta = rec.beta.unwrap();
            let eps = rec.epsilon.unwrap();
            let floor = ceil_count(beta / eps);
            assert!(rec.allocation.n.iter().all(|&n| n >= floor));
            // allocation monotone in ν̂²
            for a in 0..6 {
                for b in 0..6 {
                    if nu_prev.values[a].powi(2) >= nu_prev.values[b].powi(2) {
                        assert!(rec.allocation.n[a] >= rec.allocation.n[b]);
                    }
                }
            }
            assert!(rec.n_used >= previous);
            previous = rec.n_used;
            total_new += rec.new_samples;
            nu_prev = RelevanceVector::new(rec.nu_hat.clone());
        }
        assert_eq!(total_new, log.n_used());
        assert_eq!(log.n_used(), src.drawn());
    }

    #[test]
    fn reuse_never_draws_more_than_fresh() {
        let schedule = EpochSchedule::paper_experiment(4);
        let mut a = source(0.2, 6);
        let (_, reuse) = run_active(&mut a, &schedule, &SolverConfig::default(), &ActiveOptions::default()).unwrap();
        let mut b = source(0.2, 6);
        let fresh_opts = ActiveOptions { reuse: false, ..ActiveOptions::default() };
        let (_, fresh) = run_active(&mut b, &schedule, &SolverConfig::default(), &fresh_opts).unwrap();
        assert!(reuse.n_used() <= fresh.n_used());
    }

    #[test]
    fn hard_cap_aborts() {
        let mut src = source(0.2, 7);
        let opts = ActiveOptions { hard_cap: 10, ..ActiveOptions::default() };
        assert!(matches!(
            run_active(&mut src, &EpochSchedule::paper_experiment(2), &SolverConfig::default(), &opts),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn runs_are_deterministic() {
        let schedule = EpochSchedule::paper_experiment(3);
        let run = || {
            let mut src = source(0.4, 8);
            run_active(&mut src, &schedule, &SolverConfig::default(), &ActiveOptions::default()).unwrap().1
        };
        assert_eq!(run(), run());
    }
}
