//! Sample-based estimates of contraction rates and noise bounds.
//!
//! Every hypothesis of the contraction theorems is a supremum over the whole
//! state space. Here the supremum is taken over a finite, reproducible sample
//! of a [`SamplingRegion`], and the resulting certificate says so
//! (`is_global_claim == false`) unless the caller supplies analytic values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{contraction_factor_of, generalized_jacobian_of};
use crate::linalg;
use crate::state_space::{
    factor_metric, ContinuousSDESystem, DiscreteMapSystem, HybridSystem, MetricSnapshot, MetricSpec, Side,
};
use crate::{Matrix, StateVector};

/// Shape of a sampling region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegionShape {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Sphere { center: Vec<f64>, radius: f64 },
    Points { points: Vec<Vec<f64>> },
}

/// Finite stand-in for "for all states" in the contraction hypotheses.
///
/// Box and sphere regions are sampled with a shifted Halton sequence: the
/// first sample is always the centre, and with a fixed seed a larger
/// `sample_count` yields a superset of the samples of a smaller one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRegion {
    #[serde(flatten)]
    pub shape: RegionShape,
    pub sample_count: usize,
    #[serde(default)]
    pub seed: u64,
}

const MAX_REJECTION_FACTOR: usize = 100_000;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= candidate).all(|&p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Cranley–Patterson shifted Halton sequence in `[0, 1)ⁿ`.
struct Halton {
    bases: Vec<u64>,
    shift: Vec<f64>,
    index: u64,
}

impl Halton {
    fn new(dim: usize, seed: u64) -> Self {
        let mut state = seed;
        let shift = (0..dim)
            .map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64)
            .collect();
        Self {
            bases: first_primes(dim),
            shift,
            index: 0,
        }
    }

    fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        self.bases
            .iter()
            .zip(&self.shift)
            .map(|(&b, &s)| (radical_inverse(self.index, b) + s).fract())
            .collect()
    }
}

impl SamplingRegion {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>, sample_count: usize, seed: u64) -> Self {
        Self {
            shape: RegionShape::Box { lower, upper },
            sample_count,
            seed,
        }
    }

    pub fn sphere(center: Vec<f64>, radius: f64, sample_count: usize, seed: u64) -> Self {
        Self {
            shape: RegionShape::Sphere { center, radius },
            sample_count,
            seed,
        }
    }

    pub fn points(points: Vec<Vec<f64>>) -> Self {
        let sample_count = points.len();
        Self {
            shape: RegionShape::Points { points },
            sample_count,
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            RegionShape::Box { lower, .. } => lower.len(),
            RegionShape::Sphere { center, .. } => center.len(),
            RegionShape::Points { points } => points.first().map_or(0, Vec::len),
        }
    }

    /// Deterministic sample list for states of dimension `dim`.
    pub fn samples(&self, dim: usize) -> Result<Vec<StateVector>> {
        if self.sample_count == 0 {
            return Err(Error::EmptyRegion);
        }
        let mismatch = |actual| Error::DimensionMismatch {
            expected: dim,
            actual,
            context: "sampling region dimension",
        };
        match &self.shape {
            RegionShape::Points { points } => {
                if points.is_empty() {
                    return Err(Error::EmptyRegion);
                }
                points
                    .iter()
                    .map(|p| {
                        if p.len() == dim {
                            Ok(StateVector::from_column_slice(p))
                        } else {
                            Err(mismatch(p.len()))
                        }
                    })
                    .collect()
            }
            RegionShape::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return Err(mismatch(lower.len().max(upper.len())));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::EmptyRegion);
                }
                let center: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
                let mut out = vec![StateVector::from_vec(center)];
                let mut seq = Halton::new(dim, self.seed);
                while out.len() < self.sample_count {
                    let u = seq.next_point();
                    out.push(StateVector::from_iterator(
                        dim,
                        u.iter().zip(lower.iter().zip(upper)).map(|(s, (l, h))| l + s * (h - l)),
                    ));
                }
                Ok(out)
            }
            RegionShape::Sphere { center, radius } => {
                if center.len() != dim {
                    return Err(mismatch(center.len()));
                }
                if !(*radius >= 0.0) {
                    return Err(Error::EmptyRegion);
                }
                let c = StateVector::from_column_slice(center);
                let mut out = vec![c.clone()];
                let mut seq = Halton::new(dim, self.seed);
                let mut tries = 0usize;
                while out.len() < self.sample_count {
                    tries += 1;
                    if tries > MAX_REJECTION_FACTOR * self.sample_count {
                        return Err(Error::Config("sphere sampling did not converge".into()));
                    }
                    let u = StateVector::from_iterator(dim, seq.next_point().into_iter().map(|s| 2.0 * s - 1.0));
                    if u.norm_squared() <= 1.0 {
                        out.push(&c + u * *radius);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Supremum estimate together with the sample where it was attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub value: f64,
    pub argmax: Vec<f64>,
}

/// Order-independent max-reduction; ties resolve to the lowest sample index.
fn sup_over<F>(samples: &[StateVector], eval: F) -> Result<RateEstimate>
where
    F: Fn(&StateVector) -> Result<f64> + Sync,
{
    let values: Vec<f64> = samples.par_iter().map(&eval).collect::<Result<_>>()?;
    let (best, value) = values
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    Ok(RateEstimate {
        value,
        argmax: samples[best].iter().copied().collect(),
    })
}

/// `β̂ = max_x λ_max(F(x)ᵀF(x))` with `F = Θ_{k+1} ∂f/∂x Θ_k⁻¹`.
pub fn estimate_discrete_rate(
    system: &DiscreteMapSystem,
    metric_k: &Matrix,
    metric_next: &Matrix,
    region: &SamplingRegion,
    step: usize,
) -> Result<RateEstimate> {
    let theta1 = factor_metric(metric_k)?;
    let theta2 = factor_metric(metric_next)?;
    discrete_rate_with_factors(system, &theta1, &theta2, region, step)
}

fn discrete_rate_with_factors(
    system: &DiscreteMapSystem,
    theta1: &Matrix,
    theta2: &Matrix,
    region: &SamplingRegion,
    step: usize,
) -> Result<RateEstimate> {
    let samples = region.samples(system.dim)?;
    // Surface a singular factor before sampling.
    linalg::checked_inverse(theta1)?;
    sup_over(&samples, |x| {
        let f = generalized_jacobian_of(&system.jacobian_at(x, step), theta1, theta2)?;
        Ok(contraction_factor_of(&f))
    })
}

/// Signed continuous rate `λ̂ = −max_x λ_max(((dΘ/dt + Θ ∂f/∂x) Θ⁻¹)_s)`.
///
/// Positive means contracting, negative means expanding. The reported
/// `argmax` is the sample of largest symmetric-part eigenvalue.
pub fn estimate_continuous_rate(
    system: &ContinuousSDESystem,
    metric: &MetricSpec,
    region: &SamplingRegion,
    t: f64,
) -> Result<RateEstimate> {
    let theta = metric.factor(t, Side::Right)?;
    let theta_dot = metric.factor_rate(t, Side::Right)?;
    let theta_inv = linalg::checked_inverse(&theta)?;
    let samples = region.samples(system.dim)?;
    let sup = sup_over(&samples, |x| {
        let a = (&theta_dot + &theta * system.jacobian_at(x, t)) * &theta_inv;
        Ok(linalg::lambda_max_sym(&a))
    })?;
    Ok(RateEstimate {
        value: -sup.value,
        argmax: sup.argmax,
    })
}

/// `Ĉ_d = max_a tr(σ(a, k)ᵀ M σ(a, k) Q)`.
pub fn noise_bound_discrete(
    system: &DiscreteMapSystem,
    metric_next: &Matrix,
    region: &SamplingRegion,
    step: usize,
) -> Result<RateEstimate> {
    let q = system.noise.covariance();
    let samples = region.samples(system.dim)?;
    if metric_next.nrows() != system.dim {
        return Err(Error::DimensionMismatch {
            expected: system.dim,
            actual: metric_next.nrows(),
            context: "noise bound metric",
        });
    }
    sup_over(&samples, |a| {
        let sigma = system.gain.eval(a, step);
        if sigma.ncols() != q.nrows() {
            return Err(Error::DimensionMismatch {
                expected: q.nrows(),
                actual: sigma.ncols(),
                context: "noise gain columns vs covariance",
            });
        }
        Ok((sigma.transpose() * metric_next * &sigma * q).trace())
    })
}

/// `Ĉ_c = max_a tr(σ_c(a, t)ᵀ M σ_c(a, t))`.
pub fn noise_bound_continuous(
    system: &ContinuousSDESystem,
    metric: &Matrix,
    region: &SamplingRegion,
    t: f64,
) -> Result<RateEstimate> {
    if metric.nrows() != system.dim {
        return Err(Error::DimensionMismatch {
            expected: system.dim,
            actual: metric.nrows(),
            context: "noise bound metric",
        });
    }
    let samples = region.samples(system.dim)?;
    sup_over(&samples, |a| {
        let sigma = system.diffusion.eval(a, t);
        Ok((sigma.transpose() * metric * &sigma).trace())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateKind {
    Discrete,
    Continuous,
}

/// Estimated rate and noise bound of one system part in a given metric.
///
/// For `Discrete` the rate is `β̂ ≥ 0`; for `Continuous` it is the signed `λ̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub kind: CertificateKind,
    pub rate: f64,
    pub rate_argmax: Option<Vec<f64>>,
    pub noise_bound: f64,
    pub noise_argmax: Option<Vec<f64>>,
    pub metric: MetricSnapshot,
    pub region: Option<SamplingRegion>,
    pub is_global_claim: bool,
}

impl ContractionCertificate {
    /// Certificate from analytically known constants.
    pub fn analytic(kind: CertificateKind, rate: f64, noise_bound: f64, metric: MetricSnapshot) -> Result<Self> {
        if noise_bound < 0.0 || !noise_bound.is_finite() {
            return Err(Error::ParameterOutOfRange {
                name: "noise_bound",
                value: noise_bound,
                reason: "noise bound must be finite and non-negative",
            });
        }
        if kind == CertificateKind::Discrete && !(rate >= 0.0) {
            return Err(Error::ParameterOutOfRange {
                name: "rate",
                value: rate,
                reason: "discrete rate must be non-negative",
            });
        }
        Ok(Self {
            kind,
            rate,
            rate_argmax: None,
            noise_bound,
            noise_argmax: None,
            metric,
            region: None,
            is_global_claim: true,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// Certificate for a discrete map in the constant metric pair `(M_k, M_{k+1})`.
pub fn certify_discrete(
    system: &DiscreteMapSystem,
    metric_k: &Matrix,
    metric_next: &Matrix,
    region: &SamplingRegion,
    step: usize,
) -> Result<ContractionCertificate> {
    let rate = estimate_discrete_rate(system, metric_k, metric_next, region, step)?;
    let noise = noise_bound_discrete(system, metric_next, region, step)?;
    Ok(ContractionCertificate {
        kind: CertificateKind::Discrete,
        rate: rate.value,
        rate_argmax: Some(rate.argmax),
        noise_bound: noise.value.max(0.0),
        noise_argmax: Some(noise.argmax),
        metric: MetricSpec::constant(metric_next.clone())?.snapshot(0.0, Side::Right),
        region: Some(region.clone()),
        is_global_claim: false,
    })
}

/// Certificate for a continuous SDE at time `t`.
pub fn certify_continuous(
    system: &ContinuousSDESystem,
    metric: &MetricSpec,
    region: &SamplingRegion,
    t: f64,
) -> Result<ContractionCertificate> {
    let rate = estimate_continuous_rate(system, metric, region, t)?;
    let noise = noise_bound_continuous(system, &metric.value(t, Side::Right), region, t)?;
    Ok(ContractionCertificate {
        kind: CertificateKind::Continuous,
        rate: rate.value,
        rate_argmax: Some(rate.argmax),
        noise_bound: noise.value.max(0.0),
        noise_argmax: Some(noise.argmax),
        metric: metric.snapshot(t, Side::Right),
        region: Some(region.clone()),
        is_global_claim: false,
    })
}

/// Discrete and continuous certificates of a hybrid system at reset `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridCertificate {
    pub discrete: ContractionCertificate,
    pub continuous: ContractionCertificate,
    pub dwell_time: f64,
}

/// Certifies both parts of a hybrid system at reset index `k`.
///
/// The reset is measured with `F = Θ(kτ⁺) ∂f_d/∂a Θ(kτ⁻)⁻¹` and the
/// continuous part at the midpoint of the following dwell interval.
pub fn certify_hybrid(
    system: &HybridSystem,
    metric: &MetricSpec,
    region: &SamplingRegion,
    k: usize,
) -> Result<HybridCertificate> {
    let tau = system.dwell_time;
    let t_reset = k as f64 * tau;
    let theta_pre = metric.factor(t_reset, Side::Left)?;
    let theta_post = metric.factor(t_reset, Side::Right)?;
    let m_post = metric.value(t_reset, Side::Right);
    let rate = discrete_rate_with_factors(&system.reset, &theta_pre, &theta_post, region, k)?;
    let noise = noise_bound_discrete(&system.reset, &m_post, region, k)?;
    let discrete = ContractionCertificate {
        kind: CertificateKind::Discrete,
        rate: rate.value,
        rate_argmax: Some(rate.argmax),
        noise_bound: noise.value.max(0.0),
        noise_argmax: Some(noise.argmax),
        metric: metric.snapshot(t_reset, Side::Right),
        region: Some(region.clone()),
        is_global_claim: false,
    };
    let continuous = certify_continuous(&system.continuous, metric, region, t_reset + 0.5 * tau)?;
    Ok(HybridCertificate {
        discrete,
        continuous,
        dwell_time: tau,
    })
}
