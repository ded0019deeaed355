use active_mtrl::eval::{gamma_support_size, s_star};
use active_mtrl::nalgebra::{DMatrix, DVector};
use active_mtrl::sampler::{allocate_active, allocate_known, uniform_plan};
use active_mtrl::solver::{min_norm_combination, orthonormalize, subspace_distance, RelevanceVector};
use proptest::prelude::*;

fn relevance(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..=max_len).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-6))
}

/// `(1 − γ)·count(γ) + γM` with the count taken straight from the threshold.
fn objective(nu: &[f64], n_total: f64, gamma: f64) -> f64 {
    let norm2: f64 = nu.iter().map(|v| v * v).sum();
    let threshold = (gamma * norm2 / n_total).sqrt();
    let count = nu.iter().filter(|v| v.abs() > threshold).count();
    (1.0 - gamma) * count as f64 + gamma * nu.len() as f64
}

proptest! {
    #[test]
    fn s_star_never_above_any_gamma(nu in relevance(30), n_total in 10.0f64..1e5) {
        let report = s_star(&RelevanceVector::new(nu.clone()), n_total).unwrap();
        let m = nu.len() as f64;
        prop_assert!(report.s_star >= 1.0 - 1e-12 && report.s_star <= m + 1e-12);
        for i in 0..=400 {
            let gamma = i as f64 / 400.0;
            prop_assert!(report.s_star <= objective(&nu, n_total, gamma) + 1e-9);
        }
        // just above every breakpoint, where the objective is lowest locally
        let norm2: f64 = nu.iter().map(|v| v * v).sum();
        for v in &nu {
            let t = v * v * n_total / norm2;
            if t < 1.0 {
                let gamma = (t * (1.0 + 1e-12)).min(1.0);
                prop_assert!(report.s_star <= objective(&nu, n_total, gamma) + 1e-9);
            }
        }
    }

    #[test]
    fn support_drops_entry_at_its_own_breakpoint(nu in relevance(30), n_total in 10.0f64..1e5) {
        let r = RelevanceVector::new(nu.clone());
        let norm2 = r.norm2();
        for v in &nu {
            let t = v * v * n_total / norm2;
            let strictly_larger = nu.iter().filter(|&&u| u * u * n_total / norm2 > t).count();
            prop_assert_eq!(gamma_support_size(&r, n_total, t), strictly_larger);
        }
    }

    #[test]
    fn min_norm_solution_is_feasible_and_orthogonal_to_null_space(
        k in 1usize..6,
        extra in 0usize..8,
        seed in any::<u64>(),
    ) {
        let m = k + extra;
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let w_mat = DMatrix::from_fn(k, m, |_, _| next());
        let w = DVector::from_fn(k, |_, _| next());
        let nu = min_norm_combination(&w_mat, &w, None).to_dvector();
        prop_assert!((&w_mat * &nu - &w).norm() <= 1e-8 * (1.0 + w.norm()));
        // ν lies in the row space of W: projecting onto it changes nothing
        let q = w_mat.transpose().qr().q();
        let in_row_space = &q * (q.transpose() * &nu);
        prop_assert!((&in_row_space - &nu).norm() <= 1e-9 * (1.0 + nu.norm()));
    }

    #[test]
    fn known_allocation_respects_floor_and_budget(nu in relevance(25), floor in 1usize..50, spare in 1usize..20_000) {
        let m = nu.len();
        let n_total = m * floor + spare;
        let plan = allocate_known(&RelevanceVector::new(nu), n_total, floor).unwrap();
        prop_assert!(plan.n.iter().all(|&n| n >= floor));
        // ceil adds at most one sample per task on top of the floors and the spare share
        prop_assert!(plan.total() <= n_total + m);
    }

    #[test]
    fn active_allocation_is_monotone_in_relevance(nu in relevance(25), beta in 0.1f64..100.0, eps in 0.01f64..0.99) {
        let plan = allocate_active(&RelevanceVector::new(nu.clone()), beta, eps).unwrap();
        let floor = (beta / eps).ceil() as usize;
        for i in 0..nu.len() {
            prop_assert!(plan.n[i] + 1 >= floor);
            for j in 0..nu.len() {
                if nu[i].abs() <= nu[j].abs() {
                    prop_assert!(plan.n[i] <= plan.n[j]);
                }
            }
        }
    }

    #[test]
    fn uniform_plan_splits_exactly(n_total in 1usize..100_000, m in 1usize..200) {
        prop_assume!(n_total >= m);
        let plan = uniform_plan(n_total, m).unwrap();
        prop_assert_eq!(plan.total(), n_total);
        let (lo, hi) = (plan.n.iter().min().unwrap(), plan.n.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert!(plan.n.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn orthonormalize_keeps_product_and_span(seed in any::<u64>(), d in 3usize..12, k in 1usize..3, m in 1usize..6) {
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let b = DMatrix::from_fn(d, k, |_, _| next());
        let w = DMatrix::from_fn(k, m, |_, _| next());
        let (q, rw) = orthonormalize(&b, &w).unwrap();
        prop_assert!((&q * &rw - &b * &w).norm() <= 1e-10 * (1.0 + (&b * &w).norm()));
        prop_assert!((q.transpose() * &q - DMatrix::identity(k, k)).norm() <= 1e-10);
        let (q2, _) = orthonormalize(&(&b * 3.0), &w).unwrap();
        prop_assert!(subspace_distance(&q, &q2).unwrap() <= 1e-7);
    }
}

#[test]
fn s_star_breakpoint_rounding_regression() {
    // Entries whose breakpoint, pushed back through the square-root threshold,
    // lands a hair below |ν_m| used to stay counted at their own breakpoint.
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut misses = 0;
    for _ in 0..2000 {
        let m = 5 + (state % 40) as usize;
        let nu: Vec<f64> = (0..m)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5).powi(3)
            })
            .collect();
        let n_total = 100.0 + (state % 10_000) as f64 + 0.6;
        let exact = s_star(&RelevanceVector::new(nu.clone()), n_total).unwrap().s_star;
        let norm2: f64 = nu.iter().map(|v| v * v).sum();
        let best_above = nu
            .iter()
            .map(|v| v * v * n_total / norm2)
            .filter(|&t| t < 1.0)
            .map(|t| objective(&nu, n_total, t * (1.0 + 1e-12)))
            .fold(f64::INFINITY, f64::min);
        if exact > best_above + 1e-9 {
            misses += 1;
        }
    }
    assert_eq!(misses, 0);
}
