//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::{Matrix, StateVector};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Condition number above which a metric factor counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `(A + Aᵀ) / 2`.
pub fn symmetric_part(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Infinity norm (maximum absolute row sum).
pub fn inf_norm(a: &Matrix) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn check_square(a: &Matrix, context: &'static str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: a.ncols(),
            context,
        });
    }
    Ok(())
}

pub fn check_symmetric(a: &Matrix) -> Result<()> {
    check_square(a, "symmetric matrix must be square")?;
    let asym = max_abs(&(a - a.transpose()));
    let scale = max_abs(a).max(1.0);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    let s = symmetric_part(a);
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Largest eigenvalue of the symmetric part of `a`.
pub fn lambda_max_sym(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    *sym_eigenvalues(a).last().unwrap()
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn lambda_min_sym(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    sym_eigenvalues(a)[0]
}

/// 2-norm condition number via singular values.
pub fn condition_number(a: &Matrix) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a metric factor, rejecting ill-conditioned factors.
pub fn checked_inverse(theta: &Matrix) -> Result<Matrix> {
    check_square(theta, "metric factor must be square")?;
    let condition = condition_number(theta);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularMetric { condition });
    }
    theta
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMetric { condition })
}

/// Square root of a symmetric positive semi-definite matrix, `S Sᵀ = A`.
///
/// Negative eigenvalues (round-off on rank-deficient input) are clamped to 0.
pub fn psd_sqrt(a: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetric_part(a));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Finite-difference step for central differences at `x`.
pub fn fd_step(x: &StateVector) -> f64 {
    (1e-6 * x.norm()).max(1e-6)
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn finite_difference_jacobian<F>(f: F, x: &StateVector) -> Matrix
where
    F: Fn(&StateVector) -> StateVector,
{
    let h = fd_step(x);
    let n = x.len();
    let mut cols: Vec<StateVector> = Vec::with_capacity(n);
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    if cols.is_empty() {
        let m = f(x).len();
        return Matrix::zeros(m, 0);
    }
    Matrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_of_rank_deficient() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = psd_sqrt(&a);
        assert!(max_abs(&(&s * s.transpose() - &a)) < 1e-12);
    }

    #[test]
    fn fd_jacobian_of_cubic() {
        let f = |x: &StateVector| StateVector::from_vec(vec![x[0].powi(3), x[0] * x[1]]);
        let x = StateVector::from_vec(vec![2.0, -1.0]);
        let j = finite_difference_jacobian(f, &x);
        let exact = Matrix::from_row_slice(2, 2, &[12.0, 0.0, -1.0, 2.0]);
        assert!(max_abs(&(j - exact)) < 1e-6);
    }

    #[test]
    fn singular_factor_rejected() {
        let theta = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(matches!(checked_inverse(&theta), Err(Error::SingularMetric { .. })));
    }
}
