//! Three Andronov–Hopf oscillators on a ring, synchronised by noisy discrete
//! rotational couplings applied every `τ`.
//!
//! The phase-locked set is `M = {(R²x, Rx, x)}` with `R` the rotation by
//! `2π/3`. With `V` an orthonormal projection onto `M⊥`, the reduced state
//! `ŷ = V x̂` measures the locking error through `δ(x̂) = 3‖V x̂‖²`.

use serde::{Deserialize, Serialize};

use crate::bounds::{apply_noisefree_corollary, hybrid_bound_expanding, BoundReport};
use crate::certify::{certify_continuous, certify_discrete, HybridCertificate, SamplingRegion};
use crate::error::{Error, Result};
use crate::simulate::{derive_stream, step_count, InitialCondition, NoiseStream};
use crate::state_space::{
    ContinuousSDESystem, DiscreteMapSystem, GaussianNoiseSpec, HybridSystem, MetricSpec, NoiseGain,
};
use crate::{Matrix, StateVector};

/// Steady-state bound value printed under the published figure.
pub const CAPTION_BOUND: f64 = 0.446;
/// Coupling strengths used for the weak/strong comparison.
pub const GAMMA_WEAK: f64 = 0.01;
pub const GAMMA_STRONG: f64 = 0.2;

/// Absolute slack of the steady-state check. Without noise the asymptote is
/// zero and only the decaying transient remains in the window.
const RESPECT_FLOOR: f64 = 1e-12;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// `f(x, y) = (x − y − x³ − xy², x + y − y³ − yx²)`.
pub fn hopf_drift(p: [f64; 2]) -> [f64; 2] {
    let [x, y] = p;
    [x - y - x * x * x - x * y * y, x + y - y * y * y - y * x * x]
}

pub fn hopf_jacobian(p: [f64; 2]) -> [[f64; 2]; 2] {
    let [x, y] = p;
    [
        [1.0 - 3.0 * x * x - y * y, -1.0 - 2.0 * x * y],
        [1.0 - 2.0 * x * y, 1.0 - 3.0 * y * y - x * x],
    ]
}

/// Largest eigenvalue of the symmetric part of the Hopf Jacobian, `1 − x² − y²`.
pub fn hopf_sym_max(p: [f64; 2]) -> f64 {
    1.0 - p[0] * p[0] - p[1] * p[1]
}

/// Rotation by `2π/3`.
pub fn rotation_matrix() -> Matrix {
    Matrix::from_row_slice(2, 2, &[-0.5, -SQRT3_2, SQRT3_2, -0.5])
}

#[inline]
fn rot(p: [f64; 2]) -> [f64; 2] {
    [-0.5 * p[0] - SQRT3_2 * p[1], SQRT3_2 * p[0] - 0.5 * p[1]]
}

fn osc(x: &[f64], i: usize) -> [f64; 2] {
    [x[2 * i], x[2 * i + 1]]
}

/// Validated parameters of the oscillator network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpgParams {
    pub gamma: f64,
    pub tau: f64,
    pub sigma_c: f64,
    pub sigma_d: f64,
    /// Euler–Maruyama step; `τ/h` must be an integer.
    pub h: f64,
}

impl Default for CpgParams {
    fn default() -> Self {
        Self {
            gamma: GAMMA_STRONG,
            tau: 0.1,
            sigma_c: 0.1,
            sigma_d: 0.05,
            h: 0.001,
        }
    }
}

impl CpgParams {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::ParameterOutOfRange {
                name: "tau",
                value: self.tau,
                reason: "dwell time must be positive",
            });
        }
        for (name, v) in [("sigma_c", self.sigma_c), ("sigma_d", self.sigma_d)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::ParameterOutOfRange {
                    name,
                    value: v,
                    reason: "noise intensity must be non-negative",
                });
            }
        }
        step_count(self.tau, self.h)?;
        Ok(())
    }

    pub fn steps_per_dwell(&self) -> Result<usize> {
        step_count(self.tau, self.h)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::ParameterOutOfRange {
            name: "gamma",
            value: gamma,
            reason: "coupling strength must lie in (0, 1)",
        });
    }
    Ok(())
}

/// Simultaneous coupling update
/// `x_i⁺ = x_i + γ(R(x_{i+1} + (σ_d/√2) w_i) − x_i)`, indices mod 3.
pub fn coupling_reset(state: &StateVector, gamma: f64, sigma_d: f64, w: &[[f64; 2]; 3]) -> StateVector {
    let mut out = [0.0; 6];
    coupling_reset_into(state.as_slice(), gamma, sigma_d, w, &mut out);
    StateVector::from_column_slice(&out)
}

fn coupling_reset_into(x: &[f64], gamma: f64, sigma_d: f64, w: &[[f64; 2]; 3], out: &mut [f64; 6]) {
    let s = sigma_d / std::f64::consts::SQRT_2;
    for i in 0..3 {
        let xi = osc(x, i);
        let nxt = osc(x, (i + 1) % 3);
        let target = rot([nxt[0] + s * w[i][0], nxt[1] + s * w[i][1]]);
        out[2 * i] = xi[0] + gamma * (target[0] - xi[0]);
        out[2 * i + 1] = xi[1] + gamma * (target[1] - xi[1]);
    }
}

/// `δ = Σᵢ ‖R x_{i+1} − x_i‖²` with `x₄ = x₁`.
pub fn phase_locking_delta(state: &StateVector) -> f64 {
    delta_of(state.as_slice())
}

fn delta_of(x: &[f64]) -> f64 {
    (0..3)
        .map(|i| {
            let r = rot(osc(x, (i + 1) % 3));
            let xi = osc(x, i);
            (r[0] - xi[0]).powi(2) + (r[1] - xi[1]).powi(2)
        })
        .sum()
}

/// Point `(R²x, Rx, x)` of the phase-locked set.
pub fn manifold_point(p: [f64; 2]) -> StateVector {
    let r1 = rot(p);
    let r2 = rot(r1);
    StateVector::from_column_slice(&[r2[0], r2[1], r1[0], r1[1], p[0], p[1]])
}

/// Orthonormal projections onto `M⊥` (`V`, 4×6) and `M` (`U`, 2×6).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    pub v: Matrix,
    pub u: Matrix,
}

impl ProjectionPair {
    /// Largest entry-wise residual of the four defining identities.
    pub fn residual(&self) -> f64 {
        let i4 = Matrix::identity(4, 4);
        let i2 = Matrix::identity(2, 2);
        let i6 = Matrix::identity(6, 6);
        let r = [
            (&self.v * self.v.transpose() - i4).amax(),
            (&self.u * self.u.transpose() - i2).amax(),
            (&self.v * self.u.transpose()).amax(),
            (self.v.transpose() * &self.v + self.u.transpose() * &self.u - i6).amax(),
        ];
        r.into_iter().fold(0.0, f64::max)
    }
}

/// Rows `(1/√3)(R²e_j, Re_j, e_j)` spanning `M`.
fn manifold_basis() -> Matrix {
    let mut u = Matrix::zeros(2, 6);
    for j in 0..2 {
        let mut e = [0.0; 2];
        e[j] = 1.0;
        let p = manifold_point(e) / 3f64.sqrt();
        u.set_row(j, &p.transpose());
    }
    u
}

/// Projections with `V` obtained by Gram–Schmidt on the standard basis.
pub fn build_projections() -> ProjectionPair {
    build_projections_from(&Matrix::identity(6, 6))
}

/// Projections with `V` obtained by Gram–Schmidt on the columns of `seed`
/// after removing their `M` component. Columns that become dependent are
/// skipped; `seed` must span `R⁶`.
pub fn build_projections_from(seed: &Matrix) -> ProjectionPair {
    let u = manifold_basis();
    let mut basis: Vec<StateVector> = Vec::with_capacity(4);
    for c in seed.column_iter() {
        if basis.len() == 4 {
            break;
        }
        let mut v: StateVector = c.into_owned();
        // Two passes keep the result orthogonal to working precision.
        for _ in 0..2 {
            for r in u.row_iter() {
                let r = r.transpose();
                v -= &r * r.dot(&v);
            }
            for b in &basis {
                v -= b * b.dot(&v);
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            basis.push(v / n);
        }
    }
    assert_eq!(basis.len(), 4, "seed basis must span R^6");
    let mut v = Matrix::zeros(4, 6);
    for (i, b) in basis.iter().enumerate() {
        v.set_row(i, &b.transpose());
    }
    ProjectionPair { v, u }
}

/// Reset matrix `L` (block `(1−γ)I₂` diagonal, `γR` on the cyclic superdiagonal).
pub fn coupling_matrix(gamma: f64) -> Matrix {
    let r = rotation_matrix();
    let mut l = Matrix::zeros(6, 6);
    for i in 0..3 {
        let j = (i + 1) % 3;
        l.view_mut((2 * i, 2 * i), (2, 2)).copy_from(&(Matrix::identity(2, 2) * (1.0 - gamma)));
        l.view_mut((2 * i, 2 * j), (2, 2)).copy_from(&(&r * gamma));
    }
    l
}

/// Noise gain of the reset, `(γσ_d/√2) diag(R, R, R)` acting on `w ∈ R⁶`.
pub fn coupling_noise_gain(gamma: f64, sigma_d: f64) -> Matrix {
    let r = rotation_matrix() * (gamma * sigma_d / std::f64::consts::SQRT_2);
    let mut g = Matrix::zeros(6, 6);
    for i in 0..3 {
        g.view_mut((2 * i, 2 * i), (2, 2)).copy_from(&r);
    }
    g
}

/// `β = 3γ² − 3γ + 1`, the contraction factor of the reduced reset.
pub fn reduced_discrete_factor(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(3.0 * gamma * gamma - 3.0 * gamma + 1.0)
}

/// Eigenvalues (ascending) of `(V L Vᵀ)ᵀ(V L Vᵀ)`; all equal `β`.
pub fn reduced_discrete_eigenvalues(gamma: f64, proj: &ProjectionPair) -> Vec<f64> {
    let a = &proj.v * coupling_matrix(gamma) * proj.v.transpose();
    crate::linalg::sym_eigenvalues(&(a.transpose() * &a))
}

/// `3γ² − 3γ + 1 < e^{−2τ}`.
pub fn sync_condition(gamma: f64, tau: f64) -> bool {
    let beta = 3.0 * gamma * gamma - 3.0 * gamma + 1.0;
    beta < (-2.0 * tau).exp()
}

/// Constants of the reduced system: `β`, `λ = −1`, `C_d = 2γ²σ_d²`, `C_c = 2σ_c²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedConstants {
    pub beta: f64,
    pub lambda: f64,
    pub c_d: f64,
    pub c_c: f64,
}

pub fn reduced_constants(params: &CpgParams) -> Result<ReducedConstants> {
    Ok(ReducedConstants {
        beta: reduced_discrete_factor(params.gamma)?,
        lambda: -1.0,
        c_d: 2.0 * params.gamma.powi(2) * params.sigma_d.powi(2),
        c_c: 2.0 * params.sigma_c.powi(2),
    })
}

/// Steady-state bound on `E δ` computed two ways, plus the printed caption value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBound {
    /// Closed form `(6γ²σ_d² + 3(1−β)(1+β−βe^{2τ})e^{2τ}σ_c²) / (2(1−β)(1−βe^{2τ}))`.
    pub closed_form: f64,
    /// `3 ×` the noise-free-comparison hybrid bound with the reduced constants.
    pub pipeline: f64,
    pub caption: f64,
    /// Caption and closed form differ by more than 5%.
    pub caption_discrepancy: bool,
    pub report: BoundReport,
}

pub fn theoretical_delta_bound(params: &CpgParams) -> Result<DeltaBound> {
    params.validate()?;
    let k = reduced_constants(params)?;
    let beta = k.beta;
    let e = (2.0 * params.tau).exp();
    let r = beta * e;
    if r >= 1.0 {
        return Err(Error::ConditionViolated { value: r });
    }
    let g2 = params.gamma.powi(2);
    let closed_form = (6.0 * g2 * params.sigma_d.powi(2)
        + 3.0 * (1.0 - beta) * (1.0 + beta - r) * e * params.sigma_c.powi(2))
        / (2.0 * (1.0 - beta) * (1.0 - r));
    let report = apply_noisefree_corollary(&hybrid_bound_expanding(beta, k.lambda, k.c_d, k.c_c, params.tau, 0.0)?)?;
    let pipeline = 3.0 * report.asymptotic_bound;
    Ok(DeltaBound {
        closed_form,
        pipeline,
        caption: CAPTION_BOUND,
        caption_discrepancy: (CAPTION_BOUND - closed_form).abs() > 0.05 * closed_form.max(f64::MIN_POSITIVE),
        report,
    })
}

/// Full 6-dimensional hybrid system.
pub fn build_hybrid_system(params: &CpgParams) -> Result<HybridSystem> {
    params.validate()?;
    let flow = ContinuousSDESystem::new(6, |x, _| {
        let mut out = StateVector::zeros(6);
        for i in 0..3 {
            let f = hopf_drift(osc(x.as_slice(), i));
            out[2 * i] = f[0];
            out[2 * i + 1] = f[1];
        }
        out
    })
    .with_jacobian(|x, _| block_jacobian(x.as_slice()))
    .with_diffusion(NoiseGain::Isotropic(params.sigma_c / std::f64::consts::SQRT_2));
    let reset = DiscreteMapSystem::linear(coupling_matrix(params.gamma)).with_noise(
        NoiseGain::constant(coupling_noise_gain(params.gamma, params.sigma_d)),
        GaussianNoiseSpec::standard(6),
    );
    Ok(HybridSystem::new(flow, reset, params.tau))
}

fn block_jacobian(x: &[f64]) -> Matrix {
    let mut j = Matrix::zeros(6, 6);
    for i in 0..3 {
        let b = hopf_jacobian(osc(x, i));
        for (r, row) in b.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                j[(2 * i + r, 2 * i + c)] = *v;
            }
        }
    }
    j
}

/// Reduced reset `ŷ⁺ = V L Vᵀ ŷ + V G w` on `M⊥`.
pub fn reduced_discrete_system(params: &CpgParams, proj: &ProjectionPair) -> Result<DiscreteMapSystem> {
    params.validate()?;
    let a = &proj.v * coupling_matrix(params.gamma) * proj.v.transpose();
    let g = &proj.v * coupling_noise_gain(params.gamma, params.sigma_d);
    Ok(DiscreteMapSystem::linear(a).with_noise(NoiseGain::constant(g), GaussianNoiseSpec::standard(6)))
}

/// Reduced flow on the slice `x̂ = Vᵀŷ` through the origin, with diffusion
/// `V (σ_c/√2) I₆`. Its symmetric Jacobian peaks at `ŷ = 0`.
pub fn reduced_continuous_system(params: &CpgParams, proj: &ProjectionPair) -> Result<ContinuousSDESystem> {
    params.validate()?;
    let v = proj.v.clone();
    let vt = proj.v.transpose();
    let (v2, vt2) = (v.clone(), vt.clone());
    let sigma = &proj.v * (params.sigma_c / std::f64::consts::SQRT_2);
    Ok(ContinuousSDESystem::new(4, move |y, _| {
        let x = &vt * y;
        let mut f = StateVector::zeros(6);
        for i in 0..3 {
            let d = hopf_drift(osc(x.as_slice(), i));
            f[2 * i] = d[0];
            f[2 * i + 1] = d[1];
        }
        &v * f
    })
    .with_jacobian(move |y, _| {
        let x = &vt2 * y;
        &v2 * block_jacobian(x.as_slice()) * &vt2
    })
    .with_diffusion(NoiseGain::constant(sigma)))
}

/// Sample-based certificates of the reduced system in the identity metric
/// over `[−1, 1]⁴`. The region centre attains the global rate `λ = −1`.
pub fn certify_reduced(params: &CpgParams, sample_count: usize, seed: u64) -> Result<HybridCertificate> {
    let proj = build_projections();
    let region = SamplingRegion::boxed(vec![-1.0; 4], vec![1.0; 4], sample_count, seed);
    let i4 = Matrix::identity(4, 4);
    let discrete = certify_discrete(&reduced_discrete_system(params, &proj)?, &i4, &i4, &region, 0)?;
    let continuous = certify_continuous(&reduced_continuous_system(params, &proj)?, &MetricSpec::identity(4), &region, 0.0)?;
    Ok(HybridCertificate {
        discrete,
        continuous,
        dwell_time: params.tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpgExperimentConfig {
    pub params: CpgParams,
    pub runs: usize,
    pub horizon: f64,
    pub master_seed: u64,
    pub initial: InitialCondition,
    /// Fraction of the horizon, counted from the end, used for steady state.
    pub steady_fraction: f64,
    /// Recording interval in SDE steps for traces and δ samples.
    pub record_stride: usize,
    /// Number of runs whose δ series are written out individually.
    pub sample_runs: usize,
}

impl CpgExperimentConfig {
    pub fn new(params: CpgParams, runs: usize, horizon: f64, master_seed: u64) -> Self {
        Self {
            params,
            runs,
            horizon,
            master_seed,
            initial: InitialCondition::BoxUniform {
                lower: vec![-1.0; 6],
                upper: vec![1.0; 6],
            },
            steady_fraction: 0.2,
            record_stride: 10,
            sample_runs: 10,
        }
    }
}

/// `(t, oscillator, x, y)` for run 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub oscillator: usize,
    pub x: f64,
    pub y: f64,
}

/// First coordinates of `x₁`, `Rx₂`, `R²x₃` for run 0; equal on `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedRow {
    pub t: f64,
    pub x1: f64,
    pub rx2: f64,
    pub r2x3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub t: f64,
    pub run: usize,
    pub delta: f64,
}

/// Ensemble mean of `δ` on the recording grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaStat {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpgSummary {
    pub params: CpgParams,
    pub runs: usize,
    pub horizon: f64,
    pub master_seed: u64,
    pub beta: f64,
    pub sync_condition: bool,
    pub bound: Option<DeltaBound>,
    /// Mean over runs of the per-run time average of `δ` on the window.
    pub steady_state_mean: f64,
    pub steady_state_stderr: f64,
    /// Same statistic restricted to pre-reset instants.
    pub steady_state_pre_reset_mean: f64,
    pub steady_state_window: [f64; 2],
    pub failures: usize,
    /// `E δ + 3 se ≤ pipeline bound`, when a bound exists.
    pub bound_respected: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpgExperiment {
    pub summary: CpgSummary,
    pub trace: Vec<TraceRow>,
    pub aligned: Vec<AlignedRow>,
    pub delta: Vec<DeltaRow>,
    pub delta_stats: Vec<DeltaStat>,
}

impl CpgExperiment {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("t,oscillator,x,y\n");
        for r in &self.trace {
            s.push_str(&format!("{},{},{},{}\n", r.t, r.oscillator, r.x, r.y));
        }
        s
    }

    pub fn aligned_csv(&self) -> String {
        let mut s = String::from("t,x1_e1,rx2_e1,r2x3_e1\n");
        for r in &self.aligned {
            s.push_str(&format!("{},{},{},{}\n", r.t, r.x1, r.rx2, r.r2x3));
        }
        s
    }

    pub fn delta_csv(&self) -> String {
        let mut s = String::from("t,run,delta\n");
        for r in &self.delta {
            s.push_str(&format!("{},{},{}\n", r.t, r.run, r.delta));
        }
        s
    }

    pub fn delta_stats_csv(&self) -> String {
        let mut s = String::from("t,mean_delta,stderr\n");
        for r in &self.delta_stats {
            s.push_str(&format!("{},{},{}\n", r.t, r.mean, r.stderr));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// Output of one simulated run.
struct RunOutput {
    /// `δ` on the recording grid (post-reset value at reset instants).
    grid_delta: Vec<f64>,
    /// States on the recording grid, kept for run 0 only.
    grid_states: Vec<[f64; 6]>,
    window_mean: f64,
    window_pre_mean: f64,
    failed: bool,
}

struct Layout {
    dwells: usize,
    steps_per_dwell: usize,
    window_start: f64,
    stride: usize,
}

impl Layout {
    /// Recording times: every `stride` steps, plus every reset instant.
    fn grid(&self, h: f64) -> Vec<f64> {
        let total = self.dwells * self.steps_per_dwell;
        (0..=total)
            .filter(|n| n % self.stride == 0 || n % self.steps_per_dwell == 0)
            .map(|n| n as f64 * h)
            .collect()
    }
}

fn simulate_run(params: &CpgParams, cfg: &CpgExperimentConfig, layout: &Layout, run: usize) -> RunOutput {
    let mut stream = derive_stream(cfg.master_seed, run as u64, 0);
    let x0 = cfg.initial.sample(0, &mut stream);
    let mut x = [0.0; 6];
    x.copy_from_slice(x0.as_slice());
    let h = params.h;
    let sqrt_h = h.sqrt();
    let s_c = params.sigma_c / std::f64::consts::SQRT_2;
    let keep_states = run == 0;
    let mut out = RunOutput {
        grid_delta: Vec::new(),
        grid_states: Vec::new(),
        window_mean: f64::NAN,
        window_pre_mean: f64::NAN,
        failed: false,
    };
    let (mut win_sum, mut win_n, mut pre_sum, mut pre_n) = (0.0, 0usize, 0.0, 0usize);
    let record = |out: &mut RunOutput, x: &[f64; 6]| {
        out.grid_delta.push(delta_of(x));
        if keep_states {
            out.grid_states.push(*x);
        }
    };
    let draw_pair = |s: &mut NoiseStream| [s.normal(), s.normal()];
    for k in 0..=layout.dwells {
        let t_k = k as f64 * params.tau;
        if k > 0 && t_k >= layout.window_start - 1e-12 {
            pre_sum += delta_of(&x);
            pre_n += 1;
        }
        let w = [draw_pair(&mut stream), draw_pair(&mut stream), draw_pair(&mut stream)];
        let mut next = [0.0; 6];
        coupling_reset_into(&x, params.gamma, params.sigma_d, &w, &mut next);
        x = next;
        record(&mut out, &x);
        if k == layout.dwells {
            break;
        }
        for j in 1..=layout.steps_per_dwell {
            let mut dx = [0.0; 6];
            for i in 0..3 {
                let f = hopf_drift(osc(&x, i));
                dx[2 * i] = f[0] * h;
                dx[2 * i + 1] = f[1] * h;
            }
            for (xi, di) in x.iter_mut().zip(dx) {
                *xi += di + s_c * sqrt_h * stream.normal();
            }
            if !x.iter().all(|v| v.is_finite()) {
                out.failed = true;
                return out;
            }
            let n = k * layout.steps_per_dwell + j;
            let t = n as f64 * h;
            if t >= layout.window_start - 1e-12 {
                win_sum += delta_of(&x);
                win_n += 1;
            }
            if j < layout.steps_per_dwell && n % layout.stride == 0 {
                record(&mut out, &x);
            }
        }
    }
    out.window_mean = win_sum / win_n.max(1) as f64;
    out.window_pre_mean = pre_sum / pre_n.max(1) as f64;
    out
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Simulates `runs` independent copies of the network with the reset at
/// `t = 0` applied first, and compares steady-state `E δ` with the bound.
///
/// Each run owns the noise stream `(master_seed, run, 0)`; results do not
/// depend on the number of worker threads.
pub fn run_cpg_experiment(cfg: &CpgExperimentConfig) -> Result<CpgExperiment> {
    use rayon::prelude::*;

    let params = cfg.params;
    params.validate()?;
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    if !(cfg.steady_fraction > 0.0 && cfg.steady_fraction <= 1.0) {
        return Err(Error::ParameterOutOfRange {
            name: "steady_fraction",
            value: cfg.steady_fraction,
            reason: "must lie in (0, 1]",
        });
    }
    if cfg.initial.dim() != 6 {
        return Err(Error::DimensionMismatch {
            expected: 6,
            actual: cfg.initial.dim(),
            context: "initial condition",
        });
    }
    let steps_per_dwell = params.steps_per_dwell()?;
    let dwells = step_count(cfg.horizon, params.tau).map_err(|_| Error::ParameterOutOfRange {
        name: "horizon",
        value: cfg.horizon,
        reason: "horizon must be a positive multiple of the dwell time",
    })?;
    if dwells == 0 {
        return Err(Error::ParameterOutOfRange {
            name: "horizon",
            value: cfg.horizon,
            reason: "horizon must be a positive multiple of the dwell time",
        });
    }
    let layout = Layout {
        dwells,
        steps_per_dwell,
        window_start: cfg.horizon * (1.0 - cfg.steady_fraction),
        stride: cfg.record_stride.max(1),
    };
    let grid = layout.grid(params.h);

    let outputs: Vec<RunOutput> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| simulate_run(&params, cfg, &layout, r))
        .collect();

    let alive: Vec<&RunOutput> = outputs.iter().filter(|o| !o.failed).collect();
    let failures = outputs.len() - alive.len();
    let (ss_mean, ss_se) = mean_se(&alive.iter().map(|o| o.window_mean).collect::<Vec<_>>());
    let (pre_mean, _) = mean_se(&alive.iter().map(|o| o.window_pre_mean).collect::<Vec<_>>());

    let delta_stats = grid
        .iter()
        .enumerate()
        .map(|(g, &t)| {
            let vals: Vec<f64> = alive.iter().map(|o| o.grid_delta[g]).collect();
            let (mean, stderr) = mean_se(&vals);
            DeltaStat { t, mean, stderr }
        })
        .collect();

    let mut delta = Vec::new();
    for (run, o) in outputs.iter().enumerate().take(cfg.sample_runs) {
        for (g, d) in o.grid_delta.iter().enumerate() {
            delta.push(DeltaRow { t: grid[g], run, delta: *d });
        }
    }

    let mut trace = Vec::new();
    let mut aligned = Vec::new();
    for (g, x) in outputs[0].grid_states.iter().enumerate() {
        let t = grid[g];
        for i in 0..3 {
            trace.push(TraceRow {
                t,
                oscillator: i + 1,
                x: x[2 * i],
                y: x[2 * i + 1],
            });
        }
        aligned.push(AlignedRow {
            t,
            x1: x[0],
            rx2: rot(osc(x, 1))[0],
            r2x3: rot(rot(osc(x, 2)))[0],
        });
    }

    let beta = reduced_discrete_factor(params.gamma)?;
    let sync = sync_condition(params.gamma, params.tau);
    let bound = if sync { Some(theoretical_delta_bound(&params)?) } else { None };
    let bound_respected = bound.as_ref().map(|b| ss_mean + 3.0 * ss_se <= b.pipeline + RESPECT_FLOOR);
    Ok(CpgExperiment {
        summary: CpgSummary {
            params,
            runs: cfg.runs,
            horizon: cfg.horizon,
            master_seed: cfg.master_seed,
            beta,
            sync_condition: sync,
            bound,
            steady_state_mean: ss_mean,
            steady_state_stderr: ss_se,
            steady_state_pre_reset_mean: pre_mean,
            steady_state_window: [layout.window_start, cfg.horizon],
            failures,
            bound_respected,
        },
        trace,
        aligned,
        delta,
        delta_stats,
    })
}
