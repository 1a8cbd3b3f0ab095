//! Closed-form mean-square bounds for discrete and hybrid stochastic
//! contracting systems, and the hybrid regime classifier.
//!
//! Conventions: `beta` is the discrete contraction rate, `lambda` the signed
//! continuous rate (positive contracting), `c`, `c_d`, `c_c` the noise bounds
//! and `tau` the dwell time. `e0` is the initial mean-square distance (or the
//! initial mean distance for the distance-form discrete bound).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::state_space::Side;

/// Relative tolerance for the `β = e^{−2|λ|τ}` equality branch.
pub const BOUNDARY_EQ_TOL: f64 = 1e-12;
/// Relative distance to the boundary below which a warning is attached.
pub const BOUNDARY_WARN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremTag {
    #[serde(rename = "thm1-distance")]
    Thm1Distance,
    #[serde(rename = "thm1-ms")]
    Thm1Ms,
    #[serde(rename = "thm2")]
    Thm2,
    #[serde(rename = "thm3")]
    Thm3,
    #[serde(rename = "thm4-bounded")]
    Thm4Bounded,
    #[serde(rename = "thm4-linear-growth")]
    Thm4LinearGrowth,
    #[serde(rename = "thm4-unbounded")]
    Thm4Unbounded,
    #[serde(rename = "corollary-noisefree")]
    CorollaryNoiseFree,
    /// Single-interval continuous bound (no resets), used for pure SDE pairs.
    #[serde(rename = "continuous-interval")]
    ContinuousInterval,
}

impl TheoremTag {
    pub fn as_str(self) -> &'static str {
        match self {
            TheoremTag::Thm1Distance => "thm1-distance",
            TheoremTag::Thm1Ms => "thm1-ms",
            TheoremTag::Thm2 => "thm2",
            TheoremTag::Thm3 => "thm3",
            TheoremTag::Thm4Bounded => "thm4-bounded",
            TheoremTag::Thm4LinearGrowth => "thm4-linear-growth",
            TheoremTag::Thm4Unbounded => "thm4-unbounded",
            TheoremTag::CorollaryNoiseFree => "corollary-noisefree",
            TheoremTag::ContinuousInterval => "continuous-interval",
        }
    }

    pub fn is_bounded(self) -> bool {
        !matches!(self, TheoremTag::Thm4LinearGrowth | TheoremTag::Thm4Unbounded)
    }

    pub fn is_hybrid(self) -> bool {
        matches!(
            self,
            TheoremTag::Thm2 | TheoremTag::Thm3 | TheoremTag::Thm4Bounded | TheoremTag::Thm4LinearGrowth | TheoremTag::Thm4Unbounded
        )
    }
}

impl fmt::Display for TheoremTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Echo of the constants a report was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundInputs {
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub e0: f64,
}

fn ser_maybe_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn de_maybe_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Repr::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s}"))),
    }
}

/// Output of a bound calculator.
///
/// The full bound is `asymptotic_bound + transient_prefactor · E₀ ·
/// factor(k)` where `factor(k) = transient_rate_per_step^k` for the discrete
/// and neutral/expanding hybrid cases, and `β^k e^{−2λt}` for the contracting
/// hybrid case (`k = ⌊t/τ⌋`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem_tag: TheoremTag,
    /// Underlying theorem for noise-free corollary reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_tag: Option<TheoremTag>,
    #[serde(serialize_with = "ser_maybe_inf", deserialize_with = "de_maybe_inf")]
    pub asymptotic_bound: f64,
    pub transient_rate_per_step: f64,
    pub transient_prefactor: f64,
    /// `β e^{2|λ|τ}` for the linear-growth and unbounded regimes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_factor_per_step: Option<f64>,
    pub inputs: BoundInputs,
    pub noise_free: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl BoundReport {
    fn shape_tag(&self) -> TheoremTag {
        self.base_tag.unwrap_or(self.theorem_tag)
    }

    pub fn is_bounded(&self) -> bool {
        self.asymptotic_bound.is_finite()
    }

    /// Discrete bound at step `k`.
    pub fn at_step(&self, k: usize) -> f64 {
        self.asymptotic_bound + self.transient_prefactor * self.inputs.e0 * self.transient_rate_per_step.powi(k as i32)
    }

    /// Point-mass refinement `A + r^k [E₀ − A]⁺` of the discrete bounds.
    pub fn at_step_point_mass(&self, k: usize) -> f64 {
        let excess = (self.inputs.e0 - self.asymptotic_bound).max(0.0);
        self.asymptotic_bound + excess * self.transient_rate_per_step.powi(k as i32)
    }

    /// Bound at time `t`. At a reset instant `Left` uses the interval that
    /// ends there (`kτ⁻`), `Right` the interval that starts there.
    pub fn at_time(&self, t: f64, side: Side) -> f64 {
        // Finite on every finite horizon, with or without an asymptote.
        if self.shape_tag() == TheoremTag::ContinuousInterval {
            let lambda = self.inputs.lambda.unwrap_or(0.0);
            let c_c = self.inputs.c_c.unwrap_or(0.0);
            return continuous_interval_value(lambda, c_c, self.inputs.e0, t);
        }
        if !self.is_bounded() {
            return f64::INFINITY;
        }
        let e0 = self.inputs.e0;
        match self.shape_tag() {
            TheoremTag::Thm1Distance | TheoremTag::Thm1Ms => self.at_step(t.round().max(0.0) as usize),
            tag => {
                let tau = self.inputs.tau.unwrap_or(1.0);
                let k = dwell_index(t, tau, side);
                let decay = match tag {
                    TheoremTag::Thm2 => {
                        let lambda = self.inputs.lambda.unwrap_or(0.0);
                        self.inputs.beta.powi(k) * (-2.0 * lambda * t).exp()
                    }
                    _ => self.transient_rate_per_step.powi(k),
                };
                self.asymptotic_bound + self.transient_prefactor * e0 * decay
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bound report serializes")
    }
}

/// `⌊t/τ⌋`, stepping back one interval for left limits at reset instants.
pub fn dwell_index(t: f64, tau: f64, side: Side) -> i32 {
    let x = t / tau;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        x.floor()
    };
    let k = k.max(0.0) as i32;
    if side == Side::Left && (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) && k > 0 {
        k - 1
    } else {
        k
    }
}

fn continuous_interval_value(lambda: f64, c_c: f64, e0: f64, t: f64) -> f64 {
    if lambda > 0.0 {
        c_c / lambda + e0 * (-2.0 * lambda * t).exp()
    } else if lambda == 0.0 {
        e0 + 2.0 * c_c * t
    } else {
        let g = (2.0 * lambda.abs() * t).exp();
        c_c / lambda.abs() * (g - 1.0) + e0 * g
    }
}

fn check_beta(beta: f64) -> Result<()> {
    // β = 0 (one-step collapse plus noise) is admitted.
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::BetaOutOfRange { beta });
    }
    Ok(())
}

fn check_nonneg(name: &'static str, value: f64) -> Result<()> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::ParameterOutOfRange {
            name,
            value,
            reason: "must be finite and non-negative",
        });
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::ParameterOutOfRange {
            name: "tau",
            value: tau,
            reason: "dwell time must be positive",
        });
    }
    Ok(())
}

/// Distance-form discrete bound: `E d_k ≤ 2√C/(1−√β) + √β^k E d_0`.
pub fn discrete_distance_bound(beta: f64, c: f64, e0_distance: f64) -> Result<BoundReport> {
    check_beta(beta)?;
    check_nonneg("c", c)?;
    check_nonneg("e0", e0_distance)?;
    let sb = beta.sqrt();
    Ok(BoundReport {
        theorem_tag: TheoremTag::Thm1Distance,
        base_tag: None,
        asymptotic_bound: 2.0 * c.sqrt() / (1.0 - sb),
        transient_rate_per_step: sb,
        transient_prefactor: 1.0,
        growth_factor_per_step: None,
        inputs: BoundInputs {
            beta,
            c: Some(c),
            e0: e0_distance,
            ..Default::default()
        },
        noise_free: false,
        warnings: Vec::new(),
    })
}

/// Mean-square discrete bound for constant metrics:
/// `E‖a_k − b_k‖² ≤ 2C/(1−β) + β^k E₀`.
pub fn discrete_ms_bound(beta: f64, c: f64, e0_ms: f64) -> Result<BoundReport> {
    check_beta(beta)?;
    check_nonneg("c", c)?;
    check_nonneg("e0", e0_ms)?;
    Ok(BoundReport {
        theorem_tag: TheoremTag::Thm1Ms,
        base_tag: None,
        asymptotic_bound: 2.0 * c / (1.0 - beta),
        transient_rate_per_step: beta,
        transient_prefactor: 1.0,
        growth_factor_per_step: None,
        inputs: BoundInputs {
            beta,
            c: Some(c),
            e0: e0_ms,
            ..Default::default()
        },
        noise_free: false,
        warnings: Vec::new(),
    })
}

fn hybrid_inputs(beta: f64, lambda: f64, c_d: f64, c_c: f64, tau: f64, e0: f64) -> BoundInputs {
    BoundInputs {
        beta,
        lambda: Some(lambda),
        c: None,
        c_d: Some(c_d),
        c_c: Some(c_c),
        tau: Some(tau),
        e0,
    }
}

fn check_hybrid(beta: f64, c_d: f64, c_c: f64, tau: f64, e0: f64) -> Result<()> {
    check_beta(beta)?;
    check_nonneg("c_d", c_d)?;
    check_nonneg("c_c", c_c)?;
    check_nonneg("e0", e0)?;
    check_tau(tau)
}

/// Both parts contracting (`λ > 0`): asymptote
/// `C₁ = (2λC_d + (1−β)(1+β−r₁)C_c) / (λ(1−β)(1−r₁))`, `r₁ = β e^{−2λτ}`,
/// full bound `C₁ + E₀ β^⌊t/τ⌋ e^{−2λt}`.
pub fn hybrid_bound_contracting(beta: f64, lambda: f64, c_d: f64, c_c: f64, tau: f64, e0_ms: f64) -> Result<BoundReport> {
    check_hybrid(beta, c_d, c_c, tau, e0_ms)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::ParameterOutOfRange {
            name: "lambda",
            value: lambda,
            reason: "contracting hybrid bound needs lambda > 0",
        });
    }
    let r1 = beta * (-2.0 * lambda * tau).exp();
    let c1 = (2.0 * lambda * c_d + (1.0 - beta) * (1.0 + beta - r1) * c_c) / (lambda * (1.0 - beta) * (1.0 - r1));
    Ok(BoundReport {
        theorem_tag: TheoremTag::Thm2,
        base_tag: None,
        asymptotic_bound: c1,
        transient_rate_per_step: r1,
        transient_prefactor: 1.0,
        growth_factor_per_step: None,
        inputs: hybrid_inputs(beta, lambda, c_d, c_c, tau, e0_ms),
        noise_free: false,
        warnings: Vec::new(),
    })
}

/// Indifferent continuous part (`λ = 0`): asymptote
/// `C₂ = (2C_d + 2β(1−β)C_cτ)/(1−β)²`, full bound `C₂ + E₀ β^⌊t/τ⌋`.
pub fn hybrid_bound_neutral(beta: f64, c_d: f64, c_c: f64, tau: f64, e0_ms: f64) -> Result<BoundReport> {
    check_hybrid(beta, c_d, c_c, tau, e0_ms)?;
    let c2 = (2.0 * c_d + 2.0 * beta * (1.0 - beta) * c_c * tau) / (1.0 - beta).powi(2);
    Ok(BoundReport {
        theorem_tag: TheoremTag::Thm3,
        base_tag: None,
        asymptotic_bound: c2,
        transient_rate_per_step: beta,
        transient_prefactor: 1.0,
        growth_factor_per_step: None,
        inputs: hybrid_inputs(beta, 0.0, c_d, c_c, tau, e0_ms),
        noise_free: false,
        warnings: Vec::new(),
    })
}

/// Regime of an expanding continuous part, plus an optional near-boundary
/// warning.
fn expanding_regime(beta: f64, lambda_abs: f64, tau: f64) -> (TheoremTag, Option<String>) {
    let threshold = (-2.0 * lambda_abs * tau).exp();
    let rel = (beta - threshold).abs() / threshold;
    let warning = (rel <= BOUNDARY_WARN_TOL).then(|| {
        format!("beta = {beta} is within relative {rel:e} of the regime boundary exp(-2|lambda|tau) = {threshold}")
    });
    let tag = if rel <= BOUNDARY_EQ_TOL {
        TheoremTag::Thm4LinearGrowth
    } else if beta < threshold {
        TheoremTag::Thm4Bounded
    } else {
        TheoremTag::Thm4Unbounded
    };
    (tag, warning)
}

/// Expanding continuous part (`λ < 0`). When `β < e^{−2|λ|τ}` the asymptote
/// is `C₃ = (2|λ|C_d + (1−β)(1+β−r₂)e^{2|λ|τ}C_c) / (|λ|(1−β)(1−r₂))` with
/// `r₂ = β e^{2|λ|τ}` and transient `e^{2|λ|τ} r₂^⌊t/τ⌋ E₀`; otherwise the
/// report is unbounded (linear growth at equality).
pub fn hybrid_bound_expanding(beta: f64, lambda_neg: f64, c_d: f64, c_c: f64, tau: f64, e0_ms: f64) -> Result<BoundReport> {
    check_hybrid(beta, c_d, c_c, tau, e0_ms)?;
    if !(lambda_neg < 0.0) || !lambda_neg.is_finite() {
        return Err(Error::ParameterOutOfRange {
            name: "lambda",
            value: lambda_neg,
            reason: "expanding hybrid bound needs lambda < 0",
        });
    }
    let l = lambda_neg.abs();
    let growth = (2.0 * l * tau).exp();
    let r2 = beta * growth;
    let (tag, warning) = expanding_regime(beta, l, tau);
    let inputs = hybrid_inputs(beta, lambda_neg, c_d, c_c, tau, e0_ms);
    let warnings: Vec<String> = warning.into_iter().collect();
    if tag != TheoremTag::Thm4Bounded {
        return Ok(BoundReport {
            theorem_tag: tag,
            base_tag: None,
            asymptotic_bound: f64::INFINITY,
            transient_rate_per_step: 1.0,
            transient_prefactor: 1.0,
            growth_factor_per_step: Some(r2),
            inputs,
            noise_free: false,
            warnings,
        });
    }
    let c3 = (2.0 * l * c_d + (1.0 - beta) * (1.0 + beta - r2) * growth * c_c) / (l * (1.0 - beta) * (1.0 - r2));
    Ok(BoundReport {
        theorem_tag: tag,
        base_tag: None,
        asymptotic_bound: c3,
        transient_rate_per_step: r2,
        transient_prefactor: growth,
        growth_factor_per_step: None,
        inputs,
        noise_free: false,
        warnings,
    })
}

/// Dispatches on the sign of `λ` to the matching hybrid bound.
pub fn hybrid_bound(beta: f64, lambda: f64, c_d: f64, c_c: f64, tau: f64, e0_ms: f64) -> Result<BoundReport> {
    if lambda > 0.0 {
        hybrid_bound_contracting(beta, lambda, c_d, c_c, tau, e0_ms)
    } else if lambda == 0.0 {
        hybrid_bound_neutral(beta, c_d, c_c, tau, e0_ms)
    } else {
        hybrid_bound_expanding(beta, lambda, c_d, c_c, tau, e0_ms)
    }
}

/// Single continuous interval with no resets:
/// `λ > 0`: `C_c/λ + E₀e^{−2λt}`; `λ = 0`: `E₀ + 2C_c t`;
/// `λ < 0`: `(C_c/|λ|)(e^{2|λ|t} − 1) + E₀e^{2|λ|t}`.
pub fn continuous_bound(lambda: f64, c_c: f64, e0_ms: f64) -> Result<BoundReport> {
    check_nonneg("c_c", c_c)?;
    check_nonneg("e0", e0_ms)?;
    if !lambda.is_finite() {
        return Err(Error::ParameterOutOfRange {
            name: "lambda",
            value: lambda,
            reason: "must be finite",
        });
    }
    let (asymptote, rate) = if lambda > 0.0 {
        (c_c / lambda, (-2.0 * lambda).exp())
    } else {
        (f64::INFINITY, 1.0)
    };
    let mut report = BoundReport {
        theorem_tag: TheoremTag::ContinuousInterval,
        base_tag: None,
        asymptotic_bound: asymptote,
        transient_rate_per_step: rate,
        transient_prefactor: 1.0,
        growth_factor_per_step: None,
        inputs: BoundInputs {
            beta: 0.0,
            lambda: Some(lambda),
            c_c: Some(c_c),
            e0: e0_ms,
            ..Default::default()
        },
        noise_free: false,
        warnings: Vec::new(),
    };
    if lambda <= 0.0 {
        report.warnings.push("no finite asymptote; evaluate with at_time".into());
    }
    Ok(report)
}

impl BoundReport {
    /// Finite-horizon bound for the continuous-interval report, which has
    /// no finite asymptote when `λ ≤ 0`.
    pub fn continuous_at(&self, t: f64) -> f64 {
        let lambda = self.inputs.lambda.unwrap_or(0.0);
        let c_c = self.inputs.c_c.unwrap_or(0.0);
        continuous_interval_value(lambda, c_c, self.inputs.e0, t)
    }
}

/// Re-evaluates a report for a noisy trajectory compared with a noise-free
/// one: every noise constant is halved.
pub fn apply_noisefree_corollary(report: &BoundReport) -> Result<BoundReport> {
    if report.noise_free {
        return Ok(report.clone());
    }
    let i = report.inputs;
    let half = |v: Option<f64>| v.unwrap_or(0.0) * 0.5;
    let base_tag = report.shape_tag();
    let mut out = match base_tag {
        TheoremTag::Thm1Distance => discrete_distance_bound(i.beta, half(i.c), i.e0)?,
        TheoremTag::Thm1Ms => discrete_ms_bound(i.beta, half(i.c), i.e0)?,
        TheoremTag::ContinuousInterval => continuous_bound(i.lambda.unwrap_or(0.0), half(i.c_c), i.e0)?,
        _ => hybrid_bound(
            i.beta,
            i.lambda.unwrap_or(0.0),
            half(i.c_d),
            half(i.c_c),
            i.tau.unwrap_or(1.0),
            i.e0,
        )?,
    };
    out.base_tag = Some(out.theorem_tag);
    if out.is_bounded() {
        out.theorem_tag = TheoremTag::CorollaryNoiseFree;
    }
    out.noise_free = true;
    Ok(out)
}

/// Regime tag for a hybrid system with reset rate `β`, continuous rate `λ`
/// and dwell time `τ`.
pub fn classify_regime(beta: f64, lambda: f64, tau: f64) -> TheoremTag {
    if lambda > 0.0 {
        TheoremTag::Thm2
    } else if lambda == 0.0 {
        TheoremTag::Thm3
    } else {
        expanding_regime(beta, lambda.abs(), tau).0
    }
}
