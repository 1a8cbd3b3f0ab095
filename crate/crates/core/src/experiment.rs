//! Named built-in systems and JSON experiment configurations.
//!
//! A config selects one system from the registry, optionally a constant
//! metric and a sampling region for certification, and the ensemble
//! settings used by simulation. Every run is a pure function of the config.

use serde::{Deserialize, Serialize};

use crate::bounds::{apply_noisefree_corollary, continuous_bound, discrete_ms_bound, hybrid_bound, BoundReport};
use crate::certify::{certify_continuous, certify_discrete, certify_hybrid, ContractionCertificate, SamplingRegion};
use crate::cpg::{self, CpgExperimentConfig, CpgParams};
use crate::error::{Error, Result};
use crate::simulate::{run_pair_ensemble, BoundCheck, EnsembleConfig, EnsembleStats, InitialCondition, PairingMode};
use crate::state_space::{
    matrix_from_rows, validate_system, ContinuousSDESystem, DiscreteMapSystem, GaussianNoiseSpec, HybridSystem,
    MetricSpec, NoiseGain, SystemModel,
};
use crate::Matrix;

pub const SYSTEM_NAMES: [&str; 5] = ["ou1d", "brownian", "linear-map", "hopf-cpg", "hybrid-linear"];

/// Standard-error multiple allowed above a bound before a grid point fails.
pub const VERDICT_SLACK: f64 = 3.0;

fn default_rho() -> f64 {
    0.5
}
fn default_one() -> f64 {
    1.0
}
fn default_linear_a() -> Vec<Vec<f64>> {
    vec![vec![0.5, 0.2], vec![0.0, 0.3]]
}
fn default_half() -> f64 {
    0.5
}
fn default_gamma() -> f64 {
    cpg::GAMMA_STRONG
}
fn default_cpg_tau() -> f64 {
    0.1
}
fn default_sigma_c() -> f64 {
    0.1
}
fn default_sigma_d() -> f64 {
    0.05
}
fn default_drift() -> f64 {
    -1.0
}

/// Built-in system registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `a_{k+1} = ρ a_k + σ w`.
    Ou1d {
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_one")]
        sigma: f64,
    },
    /// `dx = σ dW`.
    Brownian {
        #[serde(default = "default_one")]
        sigma: f64,
    },
    /// `a_{k+1} = A a_k + σ w`.
    LinearMap {
        #[serde(default = "default_linear_a")]
        a: Vec<Vec<f64>>,
        #[serde(default = "default_half")]
        sigma: f64,
    },
    /// Three coupled Hopf oscillators.
    HopfCpg {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_cpg_tau")]
        tau: f64,
        #[serde(default = "default_sigma_c")]
        sigma_c: f64,
        #[serde(default = "default_sigma_d")]
        sigma_d: f64,
    },
    /// `dx = a x dt + σ_c dW` between resets `x ↦ ρ x + σ_d w` every `τ`.
    HybridLinear {
        #[serde(default = "default_drift")]
        a: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_half")]
        tau: f64,
        #[serde(default = "default_one")]
        sigma_c: f64,
        #[serde(default = "default_one")]
        sigma_d: f64,
    },
}

impl SystemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::Ou1d { .. } => "ou1d",
            SystemSpec::Brownian { .. } => "brownian",
            SystemSpec::LinearMap { .. } => "linear-map",
            SystemSpec::HopfCpg { .. } => "hopf-cpg",
            SystemSpec::HybridLinear { .. } => "hybrid-linear",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::LinearMap { a, .. } => a.len(),
            SystemSpec::HopfCpg { .. } => 6,
            _ => 1,
        }
    }

    fn cpg_params(&self, h: Option<f64>) -> Option<CpgParams> {
        match *self {
            SystemSpec::HopfCpg {
                gamma,
                tau,
                sigma_c,
                sigma_d,
            } => Some(CpgParams {
                gamma,
                tau,
                sigma_c,
                sigma_d,
                h: h.unwrap_or(tau / 100.0),
            }),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::ParameterOutOfRange {
                    name,
                    value: v,
                    reason: "must be finite and non-negative",
                })
            }
        };
        match self {
            SystemSpec::Ou1d { rho, sigma } => {
                if !rho.is_finite() {
                    return Err(Error::ParameterOutOfRange {
                        name: "rho",
                        value: *rho,
                        reason: "must be finite",
                    });
                }
                nonneg("sigma", *sigma)
            }
            SystemSpec::Brownian { sigma } => nonneg("sigma", *sigma),
            SystemSpec::LinearMap { a, sigma } => {
                matrix_from_rows(a)?;
                if a.is_empty() || a.iter().any(|r| r.len() != a.len()) {
                    return Err(Error::Config("linear-map matrix must be square".into()));
                }
                nonneg("sigma", *sigma)
            }
            SystemSpec::HopfCpg { .. } => self.cpg_params(None).unwrap().validate(),
            SystemSpec::HybridLinear {
                a,
                rho,
                tau,
                sigma_c,
                sigma_d,
            } => {
                if !a.is_finite() || !rho.is_finite() {
                    return Err(Error::Config("hybrid-linear a and rho must be finite".into()));
                }
                if !(*tau > 0.0) {
                    return Err(Error::ParameterOutOfRange {
                        name: "tau",
                        value: *tau,
                        reason: "dwell time must be positive",
                    });
                }
                nonneg("sigma_c", *sigma_c)?;
                nonneg("sigma_d", *sigma_d)
            }
        }
    }

    /// Concrete system model; the CPG network is returned in full dimension.
    pub fn build(&self) -> Result<SystemModel> {
        self.validate()?;
        Ok(match self {
            SystemSpec::Ou1d { rho, sigma } => SystemModel::Discrete(
                DiscreteMapSystem::linear(Matrix::from_element(1, 1, *rho))
                    .with_noise(NoiseGain::Isotropic(*sigma), GaussianNoiseSpec::standard(1)),
            ),
            SystemSpec::Brownian { sigma } => SystemModel::Continuous(
                ContinuousSDESystem::linear(Matrix::zeros(1, 1)).with_diffusion(NoiseGain::Isotropic(*sigma)),
            ),
            SystemSpec::LinearMap { a, sigma } => {
                let a = matrix_from_rows(a)?;
                let n = a.nrows();
                SystemModel::Discrete(
                    DiscreteMapSystem::linear(a).with_noise(NoiseGain::Isotropic(*sigma), GaussianNoiseSpec::standard(n)),
                )
            }
            SystemSpec::HopfCpg { .. } => SystemModel::Hybrid(cpg::build_hybrid_system(&self.cpg_params(None).unwrap())?),
            SystemSpec::HybridLinear {
                a,
                rho,
                tau,
                sigma_c,
                sigma_d,
            } => {
                let flow =
                    ContinuousSDESystem::linear(Matrix::from_element(1, 1, *a)).with_diffusion(NoiseGain::Isotropic(*sigma_c));
                let reset = DiscreteMapSystem::linear(Matrix::from_element(1, 1, *rho))
                    .with_noise(NoiseGain::Isotropic(*sigma_d), GaussianNoiseSpec::standard(1));
                SystemModel::Hybrid(HybridSystem::new(flow, reset, *tau))
            }
        })
    }
}

/// Ensemble settings shared by `simulate` and `cpg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub pairs: usize,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub pairing_mode: PairingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialCondition>,
    #[serde(default)]
    pub record_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    /// Constant metric rows; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<SamplingRegion>,
    pub ensemble: EnsembleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// Certification result of a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOutput {
    pub system: String,
    pub certificates: Vec<ContractionCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwell_time: Option<f64>,
}

/// Simulation result of a config.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub stats: EnsembleStats,
    pub bound: BoundReport,
    /// Per-grid-point checks; empty when the bound is infinite.
    pub checks: Vec<BoundCheck>,
    /// `None` when there is no finite bound to check.
    pub verdict: Option<bool>,
    /// Ratio of the last to the first positive-time mean for unbounded regimes.
    pub growth: Option<f64>,
}

impl SimulateOutput {
    /// Ensemble CSV, with `bound` and `verdict` columns when checks exist.
    pub fn to_csv(&self) -> String {
        if self.checks.is_empty() {
            return self.stats.to_csv();
        }
        let mut out = format!("{},bound,verdict\n", EnsembleStats::CSV_HEADER);
        let mut checks = self.checks.iter().peekable();
        for p in &self.stats.points {
            let mut line = format!(
                "{},{},{},{},{}",
                p.time,
                p.side.as_str(),
                p.mean_sq_dist,
                p.stderr,
                p.n_alive
            );
            match checks.peek() {
                Some(c) if c.time == p.time && c.side == p.side => {
                    line.push_str(&format!(",{},{}", c.bound, if c.pass { "PASS" } else { "FAIL" }));
                    checks.next();
                }
                _ => line.push_str(",,"),
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

impl ExperimentConfig {
    /// Default config of a built-in system.
    pub fn builtin(name: &str) -> Result<Self> {
        let point = |a: f64, b: f64| Some(InitialCondition::PointMass { a: vec![a], b: vec![b] });
        let cfg = match name {
            "ou1d" => Self {
                system: SystemSpec::Ou1d { rho: 0.5, sigma: 1.0 },
                metric: None,
                region: Some(SamplingRegion::boxed(vec![-5.0], vec![5.0], 256, 0)),
                ensemble: EnsembleSection {
                    pairs: 10_000,
                    horizon: 200.0,
                    h: None,
                    seed: 1,
                    pairing_mode: PairingMode::TwoNoisy,
                    initial: point(0.0, 0.0),
                    record_stride: 0,
                },
                output_dir: None,
            },
            "brownian" => Self {
                system: SystemSpec::Brownian { sigma: 1.0 },
                metric: None,
                region: Some(SamplingRegion::boxed(vec![-5.0], vec![5.0], 256, 0)),
                ensemble: EnsembleSection {
                    pairs: 10_000,
                    horizon: 2.0,
                    h: Some(0.01),
                    seed: 1,
                    pairing_mode: PairingMode::TwoNoisy,
                    initial: point(0.0, 0.0),
                    record_stride: 10,
                },
                output_dir: None,
            },
            "linear-map" => Self {
                system: SystemSpec::LinearMap {
                    a: default_linear_a(),
                    sigma: 0.5,
                },
                metric: None,
                region: Some(SamplingRegion::boxed(vec![-5.0; 2], vec![5.0; 2], 256, 0)),
                ensemble: EnsembleSection {
                    pairs: 5_000,
                    horizon: 50.0,
                    h: None,
                    seed: 1,
                    pairing_mode: PairingMode::TwoNoisy,
                    initial: Some(InitialCondition::PointMass {
                        a: vec![1.0, 1.0],
                        b: vec![-1.0, -1.0],
                    }),
                    record_stride: 0,
                },
                output_dir: None,
            },
            "hopf-cpg" => Self {
                system: SystemSpec::HopfCpg {
                    gamma: cpg::GAMMA_STRONG,
                    tau: 0.1,
                    sigma_c: 0.1,
                    sigma_d: 0.05,
                },
                metric: None,
                region: Some(SamplingRegion::boxed(vec![-1.0; 4], vec![1.0; 4], 256, 0)),
                ensemble: EnsembleSection {
                    pairs: 200,
                    horizon: 50.0,
                    h: Some(0.001),
                    seed: 1,
                    pairing_mode: PairingMode::TwoNoisy,
                    initial: Some(InitialCondition::BoxUniform {
                        lower: vec![-1.0; 6],
                        upper: vec![1.0; 6],
                    }),
                    record_stride: 10,
                },
                output_dir: None,
            },
            "hybrid-linear" => Self {
                system: SystemSpec::HybridLinear {
                    a: -1.0,
                    rho: 0.5,
                    tau: 0.5,
                    sigma_c: 1.0,
                    sigma_d: 1.0,
                },
                metric: None,
                region: Some(SamplingRegion::boxed(vec![-5.0], vec![5.0], 256, 0)),
                ensemble: EnsembleSection {
                    pairs: 4_000,
                    horizon: 5.0,
                    h: Some(0.005),
                    seed: 1,
                    pairing_mode: PairingMode::TwoNoisy,
                    initial: point(0.0, 0.0),
                    record_stride: 0,
                },
                output_dir: None,
            },
            other => return Err(Error::Config(format!("unknown system '{other}'"))),
        };
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let n = self.system.dim();
        if let Some(rows) = &self.metric {
            let m = matrix_from_rows(rows)?;
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: m.nrows(),
                    context: "config metric",
                });
            }
            MetricSpec::constant(m)?;
        }
        if self.ensemble.pairs == 0 {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        if !(self.ensemble.horizon > 0.0) || !self.ensemble.horizon.is_finite() {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if let Some(h) = self.ensemble.h {
            if !(h > 0.0) {
                return Err(Error::Config("dt must be positive".into()));
            }
        }
        if let Some(ic) = &self.ensemble.initial {
            let d = ic.dim();
            if d != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: d,
                    context: "initial condition",
                });
            }
        }
        let report = validate_system(&self.system.build()?);
        if let Some(v) = report.violations.first() {
            return Err(Error::Config(format!("{}: {}", v.field, v.message)));
        }
        Ok(())
    }

    fn metric_matrix(&self) -> Result<Matrix> {
        match &self.metric {
            Some(rows) => matrix_from_rows(rows),
            None => Ok(Matrix::identity(self.system.dim(), self.system.dim())),
        }
    }

    fn region(&self) -> SamplingRegion {
        let n = match self.system {
            SystemSpec::HopfCpg { .. } => 4,
            _ => self.system.dim(),
        };
        self.region
            .clone()
            .unwrap_or_else(|| SamplingRegion::boxed(vec![-5.0; n], vec![5.0; n], 256, 0))
    }

    /// Rate and noise certificates of the configured system.
    pub fn certify(&self) -> Result<CertifyOutput> {
        self.validate()?;
        let m = self.metric_matrix()?;
        let metric = MetricSpec::constant(m.clone())?;
        let region = self.region();
        let (certificates, dwell_time) = match (&self.system, self.system.build()?) {
            (SystemSpec::HopfCpg { .. }, _) => {
                let params = self.system.cpg_params(self.ensemble.h).unwrap();
                let c = cpg::certify_reduced(&params, region.sample_count, region.seed)?;
                (vec![c.discrete, c.continuous], Some(c.dwell_time))
            }
            (_, SystemModel::Discrete(sys)) => (vec![certify_discrete(&sys, &m, &m, &region, 0)?], None),
            (_, SystemModel::Continuous(sys)) => (vec![certify_continuous(&sys, &metric, &region, 0.0)?], None),
            (_, SystemModel::Hybrid(sys)) => {
                let c = certify_hybrid(&sys, &metric, &region, 0)?;
                (vec![c.discrete, c.continuous], Some(c.dwell_time))
            }
        };
        Ok(CertifyOutput {
            system: self.system.name().into(),
            certificates,
            dwell_time,
        })
    }

    fn initial(&self) -> InitialCondition {
        self.ensemble.initial.clone().unwrap_or_else(|| {
            let n = self.system.dim();
            InitialCondition::PointMass {
                a: vec![0.0; n],
                b: vec![0.0; n],
            }
        })
    }

    /// Bound report implied by certified constants and the initial spread.
    pub fn bound_from(&self, certs: &CertifyOutput, noise_free: bool) -> Result<BoundReport> {
        let e0 = self.initial().expected_ms_distance(&self.metric_matrix()?);
        let report = match (certs.certificates.as_slice(), certs.dwell_time) {
            ([d], None) if d.kind == crate::certify::CertificateKind::Discrete => {
                discrete_ms_bound(d.rate, d.noise_bound, e0)?
            }
            ([c], None) => continuous_bound(c.rate, c.noise_bound, e0)?,
            ([d, c], Some(tau)) => hybrid_bound(d.rate, c.rate, d.noise_bound, c.noise_bound, tau, e0)?,
            _ => return Err(Error::Config("unexpected certificate layout".into())),
        };
        if noise_free {
            apply_noisefree_corollary(&report)
        } else {
            Ok(report)
        }
    }

    fn ensemble_config(&self) -> EnsembleConfig {
        let mut cfg = EnsembleConfig::new(self.ensemble.pairs, self.ensemble.horizon, self.ensemble.seed, self.initial())
            .with_pairing(self.ensemble.pairing_mode)
            .with_stride(self.ensemble.record_stride);
        cfg.sde_step = self.ensemble.h;
        cfg
    }

    /// Pair ensemble and its comparison with the certified bound.
    pub fn simulate(&self) -> Result<SimulateOutput> {
        self.validate()?;
        if matches!(self.system, SystemSpec::HopfCpg { .. }) {
            return Err(Error::Config("hopf-cpg is simulated by the cpg command".into()));
        }
        let certs = self.certify()?;
        let noise_free = self.ensemble.pairing_mode == PairingMode::NoisyVsNoiseFree;
        let bound = self.bound_from(&certs, noise_free)?;
        let system = self.system.build()?;
        let metric = MetricSpec::constant(self.metric_matrix()?)?;
        let stats = run_pair_ensemble(&system, &self.ensemble_config(), &metric)?;
        let finite_horizon = bound.is_bounded() || bound.theorem_tag == crate::bounds::TheoremTag::ContinuousInterval;
        let (checks, verdict, growth) = if finite_horizon {
            let checks = stats.check_bound(&bound, VERDICT_SLACK);
            let ok = checks.iter().all(|c| c.pass);
            (checks, Some(ok), None)
        } else {
            let first = stats.points.iter().find(|p| p.time > 0.0 && p.mean_sq_dist > 0.0);
            let last = stats.points.last();
            let growth = match (first, last) {
                (Some(f), Some(l)) => Some(l.mean_sq_dist / f.mean_sq_dist),
                _ => None,
            };
            (Vec::new(), None, growth)
        };
        Ok(SimulateOutput {
            stats,
            bound,
            checks,
            verdict,
            growth,
        })
    }

    /// CPG experiment settings for a `hopf-cpg` config.
    pub fn cpg_config(&self) -> Result<CpgExperimentConfig> {
        let params = self
            .system
            .cpg_params(self.ensemble.h)
            .ok_or_else(|| Error::Config(format!("system '{}' is not hopf-cpg", self.system.name())))?;
        params.validate()?;
        let mut cfg = CpgExperimentConfig::new(params, self.ensemble.pairs, self.ensemble.horizon, self.ensemble.seed);
        if let Some(ic) = &self.ensemble.initial {
            cfg.initial = ic.clone();
        }
        if self.ensemble.record_stride > 0 {
            cfg.record_stride = self.ensemble.record_stride;
        }
        Ok(cfg)
    }
}
