//! Metric distances, generalized Jacobians and curve lengths.
//!
//! For a map `f: Rⁿ¹ → Rⁿ²` and metrics `Mᵢ = ΘᵢᵀΘᵢ`, the generalized Jacobian
//! is `F = Θ₂ (∂f/∂x) Θ₁⁻¹`. If `λ_max(FᵀF) ≤ β` everywhere then
//! `d_{M₂}(f(u), f(v))² ≤ β d_{M₁}(u, v)²` for every pair `u, v`.

use crate::error::{Error, Result};
use crate::linalg;
use crate::state_space::factor_metric;
use crate::{Matrix, StateVector};

/// `√((x − y)ᵀ M (x − y))` for a constant SPD metric.
pub fn metric_distance(x: &StateVector, y: &StateVector, m: &Matrix) -> Result<f64> {
    Ok(metric_distance_sq(x, y, m)?.sqrt())
}

/// Squared metric distance `(x − y)ᵀ M (x − y)`, clamped at zero.
pub fn metric_distance_sq(x: &StateVector, y: &StateVector, m: &Matrix) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
            context: "metric_distance operands",
        });
    }
    if m.nrows() != x.len() || m.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: m.nrows(),
            context: "metric size",
        });
    }
    let d = x - y;
    Ok(d.dot(&(m * &d)).max(0.0))
}

/// `F = Θ₂ J Θ₁⁻¹` from an already evaluated Jacobian `J` (`n₂ × n₁`).
pub fn generalized_jacobian_of(jacobian: &Matrix, theta1: &Matrix, theta2: &Matrix) -> Result<Matrix> {
    let theta1_inv = linalg::checked_inverse(theta1)?;
    if jacobian.ncols() != theta1.nrows() {
        return Err(Error::DimensionMismatch {
            expected: theta1.nrows(),
            actual: jacobian.ncols(),
            context: "jacobian columns vs source metric",
        });
    }
    if jacobian.nrows() != theta2.ncols() {
        return Err(Error::DimensionMismatch {
            expected: theta2.ncols(),
            actual: jacobian.nrows(),
            context: "jacobian rows vs target metric",
        });
    }
    Ok(theta2 * jacobian * theta1_inv)
}

/// Generalized Jacobian of `f` at `x`, differentiating `f` by central
/// finite differences.
pub fn generalized_jacobian<F>(f: F, x: &StateVector, theta1: &Matrix, theta2: &Matrix) -> Result<Matrix>
where
    F: Fn(&StateVector) -> StateVector,
{
    let j = linalg::finite_difference_jacobian(f, x);
    generalized_jacobian_of(&j, theta1, theta2)
}

/// `λ_max(FᵀF)` for a generalized Jacobian `F`.
pub fn contraction_factor_of(f: &Matrix) -> f64 {
    linalg::lambda_max_sym(&(f.transpose() * f)).max(0.0)
}

/// `λ_max(F(x)ᵀF(x))` where `F` is the generalized Jacobian of `f` at `x`.
pub fn contraction_factor_at<F>(f: F, x: &StateVector, theta1: &Matrix, theta2: &Matrix) -> Result<f64>
where
    F: Fn(&StateVector) -> StateVector,
{
    Ok(contraction_factor_of(&generalized_jacobian(f, x, theta1, theta2)?))
}

/// Ordered samples of a curve, with strictly increasing parameters in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SampledCurve {
    points: Vec<StateVector>,
    params: Vec<f64>,
}

impl SampledCurve {
    pub fn new(points: Vec<StateVector>, params: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config("a curve needs at least two points".into()));
        }
        if params.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                actual: params.len(),
                context: "curve parameters",
            });
        }
        let n = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: p.len(),
                context: "curve point dimension",
            });
        }
        let ordered = params.windows(2).all(|w| w[1] > w[0]);
        if !ordered || params[0] < 0.0 || *params.last().unwrap() > 1.0 {
            return Err(Error::Config("curve parameters must increase strictly within [0, 1]".into()));
        }
        Ok(Self { points, params })
    }

    /// Samples `gamma` at `count` uniformly spaced parameters `0, …, 1`.
    pub fn uniform<G>(gamma: G, count: usize) -> Result<Self>
    where
        G: Fn(f64) -> StateVector,
    {
        let count = count.max(2);
        let params: Vec<f64> = (0..count).map(|i| i as f64 / (count - 1) as f64).collect();
        let points = params.iter().map(|&u| gamma(u)).collect();
        Self::new(points, params)
    }

    /// Two-point straight segment.
    pub fn segment(x: StateVector, y: StateVector) -> Result<Self> {
        Self::new(vec![x, y], vec![0.0, 1.0])
    }

    pub fn points(&self) -> &[StateVector] {
        &self.points
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Image curve `f(γ)` with the same parameters.
    pub fn map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&StateVector) -> StateVector,
    {
        Self::new(self.points.iter().map(f).collect(), self.params.clone())
    }
}

/// Piecewise-linear `M`-length `Σ ‖Θ (p_{i+1} − p_i)‖₂`.
pub fn curve_length(curve: &SampledCurve, m: &Matrix) -> Result<f64> {
    let n = curve.points[0].len();
    if m.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: m.nrows(),
            context: "metric size vs curve dimension",
        });
    }
    let theta = factor_metric(m)?;
    Ok(curve
        .points
        .windows(2)
        .map(|w| (&theta * (&w[1] - &w[0])).norm())
        .sum())
}
