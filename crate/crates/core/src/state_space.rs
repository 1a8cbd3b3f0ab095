//! Domain model: metrics, Gaussian noise and the three system classes
//! (discrete maps, continuous SDEs, hybrid resetting systems).
//!
//! Dynamics are plain closures behind `Arc`, so every system is cheap to
//! clone and can be shared across worker threads.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_symmetric};
use crate::{Matrix, StateVector};

/// Relative pivot tolerance used by [`factor_metric`].
pub const PIVOT_TOL: f64 = 1e-13;

pub type MapFn = Arc<dyn Fn(&StateVector, usize) -> StateVector + Send + Sync>;
pub type MapJacobianFn = Arc<dyn Fn(&StateVector, usize) -> Matrix + Send + Sync>;
pub type DriftFn = Arc<dyn Fn(&StateVector, f64) -> StateVector + Send + Sync>;
pub type DriftJacobianFn = Arc<dyn Fn(&StateVector, f64) -> Matrix + Send + Sync>;
pub type DeformationFn = Arc<dyn Fn(f64) -> Matrix + Send + Sync>;

/// Upper-triangular square-root factor `Θ` of an SPD matrix, `ΘᵀΘ = M`.
pub fn factor_metric(m: &Matrix) -> Result<Matrix> {
    check_symmetric(m)?;
    let n = m.nrows();
    let tol = PIVOT_TOL * linalg::max_abs(m).max(f64::MIN_POSITIVE);
    // Lower Cholesky factor, M = L Lᵀ; Θ = Lᵀ.
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tol) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l.transpose())
}

/// One-sided evaluation at reset instants: `Left` is `kτ⁻`, `Right` is `kτ⁺`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Constant SPD metric with its cached factor.
#[derive(Debug, Clone)]
pub struct ConstantMetric {
    matrix: Matrix,
    factor: Matrix,
    alpha: f64,
}

/// Time-scheduled metric `M(t) = base + D(t - kτ)` with a smooth deformation
/// `D` repeated on every dwell interval `[kτ, (k+1)τ[`.
#[derive(Clone)]
pub struct ScheduledMetric {
    base: Matrix,
    period: f64,
    deformation: Option<DeformationFn>,
    alpha: f64,
}

impl fmt::Debug for ScheduledMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScheduledMetric")
            .field("base", &self.base)
            .field("period", &self.period)
            .field("deformed", &self.deformation.is_some())
            .field("alpha", &self.alpha)
            .finish()
    }
}

/// A uniformly positive definite metric `M(t) = Θ(t)ᵀΘ(t)`.
#[derive(Debug, Clone)]
pub enum MetricSpec {
    Constant(ConstantMetric),
    Scheduled(ScheduledMetric),
}

/// Serializable view of a metric, evaluated at a reference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub kind: String,
    pub matrix: Vec<Vec<f64>>,
    pub uniform_lower_bound: f64,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Build a matrix from row vectors; all rows must have equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            actual: bad.len(),
            context: "ragged matrix rows",
        });
    }
    Ok(Matrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl MetricSpec {
    pub fn identity(n: usize) -> Self {
        Self::constant(Matrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn constant(matrix: Matrix) -> Result<Self> {
        let factor = factor_metric(&matrix)?;
        let alpha = linalg::lambda_min_sym(&matrix);
        Ok(MetricSpec::Constant(ConstantMetric {
            matrix,
            factor,
            alpha,
        }))
    }

    /// Scheduled metric with period `period` (the dwell time). The deformation
    /// is checked on a grid of phases (including both interval ends) and the
    /// smallest eigenvalue seen is recorded as the uniform lower bound.
    pub fn scheduled(base: Matrix, period: f64, deformation: Option<DeformationFn>) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::ParameterOutOfRange {
                name: "period",
                value: period,
                reason: "metric period must be positive",
            });
        }
        let mut alpha = f64::INFINITY;
        const GRID: usize = 100;
        for i in 0..=GRID {
            let s = period * i as f64 / GRID as f64;
            let m = match &deformation {
                Some(d) => &base + d(s),
                None => base.clone(),
            };
            factor_metric(&m)?;
            alpha = alpha.min(linalg::lambda_min_sym(&m));
        }
        Ok(MetricSpec::Scheduled(ScheduledMetric {
            base,
            period,
            deformation,
            alpha,
        }))
    }

    pub fn dim(&self) -> usize {
        match self {
            MetricSpec::Constant(c) => c.matrix.nrows(),
            MetricSpec::Scheduled(s) => s.base.nrows(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MetricSpec::Constant(_))
    }

    /// Recorded uniform positive-definiteness constant α.
    pub fn uniform_lower_bound(&self) -> f64 {
        match self {
            MetricSpec::Constant(c) => c.alpha,
            MetricSpec::Scheduled(s) => s.alpha,
        }
    }

    /// Phase inside the current dwell interval; `Left` at `kτ` maps to `τ`.
    fn phase(period: f64, t: f64, side: Side) -> f64 {
        let k = (t / period).floor();
        let s = t - k * period;
        if side == Side::Left && s.abs() <= 1e-12 * period {
            period
        } else {
            s
        }
    }

    pub fn value(&self, t: f64, side: Side) -> Matrix {
        match self {
            MetricSpec::Constant(c) => c.matrix.clone(),
            MetricSpec::Scheduled(s) => {
                let phase = Self::phase(s.period, t, side);
                match &s.deformation {
                    Some(d) => &s.base + d(phase),
                    None => s.base.clone(),
                }
            }
        }
    }

    pub fn factor(&self, t: f64, side: Side) -> Result<Matrix> {
        match self {
            MetricSpec::Constant(c) => Ok(c.factor.clone()),
            MetricSpec::Scheduled(_) => factor_metric(&self.value(t, side)),
        }
    }

    /// `dΘ/dt` inside a dwell interval. Zero for constant metrics, central
    /// differences of the Cholesky factor otherwise.
    pub fn factor_rate(&self, t: f64, side: Side) -> Result<Matrix> {
        match self {
            MetricSpec::Constant(c) => Ok(Matrix::zeros(c.matrix.nrows(), c.matrix.ncols())),
            MetricSpec::Scheduled(s) => {
                let n = s.base.nrows();
                let Some(d) = &s.deformation else {
                    return Ok(Matrix::zeros(n, n));
                };
                let phase = Self::phase(s.period, t, side);
                let h = 1e-6 * s.period;
                // One-sided at the interval ends.
                let lo = (phase - h).max(0.0);
                let hi = (phase + h).min(s.period);
                let f_lo = factor_metric(&(&s.base + d(lo)))?;
                let f_hi = factor_metric(&(&s.base + d(hi)))?;
                Ok((f_hi - f_lo) / (hi - lo))
            }
        }
    }

    pub fn snapshot(&self, t: f64, side: Side) -> MetricSnapshot {
        MetricSnapshot {
            kind: if self.is_constant() { "constant" } else { "scheduled" }.to_string(),
            matrix: rows_of(&self.value(t, side)),
            uniform_lower_bound: self.uniform_lower_bound(),
        }
    }
}

/// Zero-mean Gaussian noise `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNoiseSpec {
    covariance: Matrix,
    factor: Matrix,
}

impl GaussianNoiseSpec {
    /// Validated constructor; rank-deficient (PSD) covariances are accepted.
    pub fn new(covariance: Matrix) -> Result<Self> {
        check_symmetric(&covariance)?;
        let min = linalg::lambda_min_sym(&covariance);
        let scale = linalg::max_abs(&covariance).max(1.0);
        if min < -1e-12 * scale {
            return Err(Error::NotPositiveDefinite {
                index: 0,
                pivot: min,
            });
        }
        Ok(Self::unchecked(covariance))
    }

    /// Skips validation; [`validate_system`] will still report problems.
    pub fn unchecked(covariance: Matrix) -> Self {
        let factor = linalg::psd_sqrt(&covariance);
        Self { covariance, factor }
    }

    pub fn standard(d: usize) -> Self {
        Self {
            covariance: Matrix::identity(d, d),
            factor: Matrix::identity(d, d),
        }
    }

    pub fn isotropic(d: usize, variance: f64) -> Result<Self> {
        Self::new(Matrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    /// Symmetric square root `S` with `S Sᵀ = Q`.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }
}

/// State-dependent noise gain `σ(x, t)` of shape `n × d`.
#[derive(Clone)]
pub enum NoiseGain<T> {
    /// `σ I_n` (so `d = n`).
    Isotropic(f64),
    Matrix {
        noise_dim: usize,
        gain: Arc<dyn Fn(&StateVector, T) -> Matrix + Send + Sync>,
    },
}

impl<T> fmt::Debug for NoiseGain<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseGain::Isotropic(s) => write!(f, "Isotropic({s})"),
            NoiseGain::Matrix { noise_dim, .. } => write!(f, "Matrix {{ noise_dim: {noise_dim} }}"),
        }
    }
}

impl<T: Copy> NoiseGain<T> {
    pub fn constant(m: Matrix) -> Self {
        let noise_dim = m.ncols();
        NoiseGain::Matrix {
            noise_dim,
            gain: Arc::new(move |_, _| m.clone()),
        }
    }

    pub fn noise_dim(&self, state_dim: usize) -> usize {
        match self {
            NoiseGain::Isotropic(_) => state_dim,
            NoiseGain::Matrix { noise_dim, .. } => *noise_dim,
        }
    }

    pub fn eval(&self, x: &StateVector, t: T) -> Matrix {
        match self {
            NoiseGain::Isotropic(s) => Matrix::identity(x.len(), x.len()) * *s,
            NoiseGain::Matrix { gain, .. } => gain(x, t),
        }
    }

    /// `σ(x, t) w`.
    pub fn apply(&self, x: &StateVector, t: T, w: &StateVector) -> StateVector {
        match self {
            NoiseGain::Isotropic(s) => w * *s,
            NoiseGain::Matrix { gain, .. } => gain(x, t) * w,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, NoiseGain::Isotropic(s) if *s == 0.0)
    }
}

/// `a_{k+1} = f(a_k, k) + σ(a_k, k) w_{k+1}`, `w ~ N(0, Q)`.
#[derive(Clone)]
pub struct DiscreteMapSystem {
    pub dim: usize,
    pub map: MapFn,
    pub jacobian: Option<MapJacobianFn>,
    pub gain: NoiseGain<usize>,
    pub noise: GaussianNoiseSpec,
}

impl fmt::Debug for DiscreteMapSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteMapSystem")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("gain", &self.gain)
            .field("noise", &self.noise)
            .finish()
    }
}

impl DiscreteMapSystem {
    /// Noise-free map.
    pub fn new<F>(dim: usize, map: F) -> Self
    where
        F: Fn(&StateVector, usize) -> StateVector + Send + Sync + 'static,
    {
        Self {
            dim,
            map: Arc::new(map),
            jacobian: None,
            gain: NoiseGain::Isotropic(0.0),
            noise: GaussianNoiseSpec::standard(dim),
        }
    }

    /// `f(x) = A x` with its exact Jacobian.
    pub fn linear(a: Matrix) -> Self {
        let dim = a.nrows();
        let a_map = a.clone();
        Self::new(dim, move |x, _| &a_map * x).with_jacobian(move |_, _| a.clone())
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&StateVector, usize) -> Matrix + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    /// Sets the gain and noise together; `noise.dim()` must match the gain.
    pub fn with_noise(mut self, gain: NoiseGain<usize>, noise: GaussianNoiseSpec) -> Self {
        self.gain = gain;
        self.noise = noise;
        self
    }

    pub fn eval(&self, x: &StateVector, k: usize) -> StateVector {
        (self.map)(x, k)
    }

    pub fn jacobian_at(&self, x: &StateVector, k: usize) -> Matrix {
        match &self.jacobian {
            Some(j) => j(x, k),
            None => linalg::finite_difference_jacobian(|y| (self.map)(y, k), x),
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.gain.noise_dim(self.dim)
    }
}

/// `da = f_c(a, t) dt + σ_c(a, t) dW`.
#[derive(Clone)]
pub struct ContinuousSDESystem {
    pub dim: usize,
    pub drift: DriftFn,
    pub jacobian: Option<DriftJacobianFn>,
    pub diffusion: NoiseGain<f64>,
}

impl fmt::Debug for ContinuousSDESystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousSDESystem")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("diffusion", &self.diffusion)
            .finish()
    }
}

impl ContinuousSDESystem {
    pub fn new<F>(dim: usize, drift: F) -> Self
    where
        F: Fn(&StateVector, f64) -> StateVector + Send + Sync + 'static,
    {
        Self {
            dim,
            drift: Arc::new(drift),
            jacobian: None,
            diffusion: NoiseGain::Isotropic(0.0),
        }
    }

    /// `f_c(x) = A x` with its exact Jacobian.
    pub fn linear(a: Matrix) -> Self {
        let dim = a.nrows();
        let a_map = a.clone();
        Self::new(dim, move |x, _| &a_map * x).with_jacobian(move |_, _| a.clone())
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&StateVector, f64) -> Matrix + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_diffusion(mut self, diffusion: NoiseGain<f64>) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn eval(&self, x: &StateVector, t: f64) -> StateVector {
        (self.drift)(x, t)
    }

    pub fn jacobian_at(&self, x: &StateVector, t: f64) -> Matrix {
        match &self.jacobian {
            Some(j) => j(x, t),
            None => linalg::finite_difference_jacobian(|y| (self.drift)(y, t), x),
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion.noise_dim(self.dim)
    }
}

/// Continuous SDE flow on `]kτ, (k+1)τ[` with a stochastic reset at every `kτ`.
#[derive(Debug, Clone)]
pub struct HybridSystem {
    pub continuous: ContinuousSDESystem,
    pub reset: DiscreteMapSystem,
    pub dwell_time: f64,
}

impl HybridSystem {
    pub fn new(continuous: ContinuousSDESystem, reset: DiscreteMapSystem, dwell_time: f64) -> Self {
        Self {
            continuous,
            reset,
            dwell_time,
        }
    }

    pub fn dim(&self) -> usize {
        self.continuous.dim
    }
}

#[derive(Debug, Clone)]
pub enum SystemModel {
    Discrete(DiscreteMapSystem),
    Continuous(ContinuousSDESystem),
    Hybrid(HybridSystem),
}

impl SystemModel {
    pub fn dim(&self) -> usize {
        match self {
            SystemModel::Discrete(s) => s.dim,
            SystemModel::Continuous(s) => s.dim,
            SystemModel::Hybrid(s) => s.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }
}

fn validate_discrete(sys: &DiscreteMapSystem, prefix: &str, report: &mut ValidationReport) {
    let n = sys.dim;
    let origin = StateVector::zeros(n);
    let fx = sys.eval(&origin, 0);
    if fx.len() != n {
        report.push(
            format!("{prefix}map"),
            format!("map returns dimension {} but state dimension is {n}", fx.len()),
        );
    } else if fx.iter().any(|v| !v.is_finite()) {
        report.push(format!("{prefix}map"), "map is not finite at the origin");
    }
    if let Some(j) = &sys.jacobian {
        let jac = j(&origin, 0);
        if jac.shape() != (n, n) {
            report.push(
                format!("{prefix}jacobian"),
                format!("jacobian has shape {:?}, expected ({n}, {n})", jac.shape()),
            );
        }
    }
    let d = sys.noise_dim();
    let gain = sys.gain.eval(&origin, 0);
    if gain.nrows() != n {
        report.push(
            format!("{prefix}noise_gain"),
            format!("noise gain has {} rows but state dimension is {n}", gain.nrows()),
        );
    }
    if gain.ncols() != d {
        report.push(
            format!("{prefix}noise_gain"),
            format!("noise gain has {} columns, declared noise dimension {d}", gain.ncols()),
        );
    }
    if sys.noise.dim() != d {
        report.push(
            format!("{prefix}noise"),
            format!("covariance is {}x{} but noise dimension is {d}", sys.noise.dim(), sys.noise.dim()),
        );
    }
    validate_covariance(sys.noise.covariance(), &format!("{prefix}noise"), report);
}

fn validate_covariance(q: &Matrix, field: &str, report: &mut ValidationReport) {
    if q.nrows() != q.ncols() {
        report.push(field, "covariance must be square");
        return;
    }
    if check_symmetric(q).is_err() {
        report.push(field, "covariance must be symmetric");
        return;
    }
    let min = linalg::lambda_min_sym(q);
    if min < -1e-12 * linalg::max_abs(q).max(1.0) {
        report.push(field, format!("covariance must be positive semi-definite (eigenvalue {min:e})"));
    }
}

fn validate_continuous(sys: &ContinuousSDESystem, prefix: &str, report: &mut ValidationReport) {
    let n = sys.dim;
    let origin = StateVector::zeros(n);
    let fx = sys.eval(&origin, 0.0);
    if fx.len() != n {
        report.push(
            format!("{prefix}drift"),
            format!("drift returns dimension {} but state dimension is {n}", fx.len()),
        );
    } else if fx.iter().any(|v| !v.is_finite()) {
        report.push(format!("{prefix}drift"), "drift is not finite at the origin");
    }
    if let Some(j) = &sys.jacobian {
        let jac = j(&origin, 0.0);
        if jac.shape() != (n, n) {
            report.push(
                format!("{prefix}jacobian"),
                format!("jacobian has shape {:?}, expected ({n}, {n})", jac.shape()),
            );
        }
    }
    let d = sys.noise_dim();
    let gain = sys.diffusion.eval(&origin, 0.0);
    if gain.nrows() != n {
        report.push(
            format!("{prefix}diffusion"),
            format!("diffusion has {} rows but state dimension is {n}", gain.nrows()),
        );
    }
    if gain.ncols() != d {
        report.push(
            format!("{prefix}diffusion"),
            format!("diffusion has {} columns, declared noise dimension {d}", gain.ncols()),
        );
    }
}

/// Structural checks; never fails, lists every violation found.
pub fn validate_system(system: &SystemModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    match system {
        SystemModel::Discrete(s) => validate_discrete(s, "", &mut report),
        SystemModel::Continuous(s) => validate_continuous(s, "", &mut report),
        SystemModel::Hybrid(h) => {
            if !(h.dwell_time > 0.0) || !h.dwell_time.is_finite() {
                report.push("dwell_time", "dwell_time must be positive");
            }
            if h.continuous.dim != h.reset.dim {
                report.push(
                    "dimension",
                    format!(
                        "continuous part has dimension {} but reset has dimension {}",
                        h.continuous.dim, h.reset.dim
                    ),
                );
            } else {
                validate_continuous(&h.continuous, "continuous.", &mut report);
                validate_discrete(&h.reset, "reset.", &mut report);
            }
        }
    }
    report
}
