//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default relative cutoff for pseudo-inverse rank decisions:
/// `max(rows, cols) * machine epsilon`.
pub fn default_rcond(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

/// Singular values sorted in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// The k-th largest singular value (1-based), zero when the matrix has fewer.
pub fn kth_singular_value(a: &DMatrix<f64>, k: usize) -> f64 {
    assert!(k >= 1);
    singular_values(a).get(k - 1).copied().unwrap_or(0.0)
}

/// Largest entry of `|BᵀB − I|`.
pub fn orthonormality_error(b: &DMatrix<f64>) -> f64 {
    let g = b.transpose() * b;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Minimum-norm least-squares solution `A⁺ b` through a thin SVD.
///
/// Singular values at or below `rcond * σ_max` are treated as zero. Returns
/// the solution and the numerical rank.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, rcond: Option<f64>) -> Result<(DVector<f64>, usize)> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "system has {} rows but right-hand side has length {}",
            a.nrows(),
            b.len()
        )));
    }
    let mut x = DVector::zeros(a.ncols());
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok((x, 0));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Numerical("SVD did not return Vᵀ".into()))?;
    let s = &svd.singular_values;
    let s_max = s.iter().copied().fold(0.0f64, f64::max);
    if !s_max.is_finite() {
        return Err(Error::Numerical("non-finite singular value".into()));
    }
    let cutoff = rcond.unwrap_or_else(|| default_rcond(a.nrows(), a.ncols())) * s_max;
    let mut rank = 0;
    for (i, &si) in s.iter().enumerate() {
        if si > cutoff && si > 0.0 {
            rank += 1;
            let coef = u.column(i).dot(b) / si;
            x.axpy(coef, &v_t.row(i).transpose(), 1.0);
        }
    }
    Ok((x, rank))
}

/// Solves a symmetric positive semi-definite system, trying Cholesky first and
/// falling back to the minimum-norm pseudo-inverse solution.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    pinv_solve(a, b, None).map(|(x, _)| x)
}

/// A d×k matrix with orthonormal columns, Haar-distributed (QR of a Gaussian
/// matrix with the sign of `R`'s diagonal fixed positive).
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> DMatrix<f64> {
    assert!(k <= d, "cannot draw {k} orthonormal columns in dimension {d}");
    loop {
        let g = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(q) = thin_q_positive(&g) {
            return q;
        }
    }
}

/// Thin QR `a = QR` with `diag(R) > 0`.
pub(crate) fn thin_qr_positive(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = a.ncols();
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    let tol = default_rcond(a.nrows(), k) * scale.max(f64::MIN_POSITIVE);
    for i in 0..k {
        let rii = r[(i, i)];
        if !rii.is_finite() || rii.abs() <= tol || scale == 0.0 {
            return Err(Error::RankDeficient);
        }
        if rii < 0.0 {
            q.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    Ok((q, r))
}

fn thin_q_positive(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    thin_qr_positive(a).map(|(q, _)| q)
}

/// Indices of `values` sorted by decreasing value.
pub(crate) fn argsort_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

/// The `k` leading left singular vectors of `a`.
pub(crate) fn top_left_singular_vectors(a: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    if u.ncols() < k {
        return Err(Error::InvalidDims(format!(
            "need {k} singular vectors but only {} are available",
            u.ncols()
        )));
    }
    let order = argsort_desc(&s);
    let mut out = DMatrix::zeros(a.nrows(), k);
    for (j, &src) in order.iter().take(k).enumerate() {
        out.set_column(j, &u.column(src));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pinv_solve_matches_normal_equations_on_full_rank() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 2.0]);
        let (x, rank) = pinv_solve(&a, &b, None).unwrap();
        let ata = a.transpose() * &a;
        let expected = ata.try_inverse().unwrap() * a.transpose() * &b;
        assert_eq!(rank, 2);
        assert!((x - expected).norm() < 1e-12);
    }

    #[test]
    fn pinv_solve_zero_matrix_is_zero() {
        let a = DMatrix::zeros(2, 3);
        let (x, rank) = pinv_solve(&a, &DVector::from_vec(vec![1.0, 1.0]), None).unwrap();
        assert_eq!(rank, 0);
        assert_eq!(x.norm(), 0.0);
    }

    #[test]
    fn random_orthonormal_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthonormal(&mut rng, 12, 4);
        assert!(orthonormality_error(&q) < 1e-12);
    }

    #[test]
    fn qr_rejects_rank_deficient() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(thin_qr_positive(&a), Err(Error::RankDeficient)));
    }
}
