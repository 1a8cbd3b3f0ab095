//! Seeded simulation of discrete maps, SDEs (Euler–Maruyama) and hybrid
//! resetting systems, and Monte Carlo estimation of the mean-square metric
//! distance between trajectory pairs driven by independent noise.
//!
//! Every trajectory owns a [`NoiseStream`] derived from
//! `(master_seed, pair_index, member_index)`, so ensemble output does not
//! depend on scheduling or worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundReport, TheoremTag};
use crate::error::{Error, Result};
use crate::state_space::{ContinuousSDESystem, DiscreteMapSystem, HybridSystem, MetricSpec, Side, SystemModel};
use crate::{Matrix, StateVector};

/// Independent, reproducible source of Gaussian and uniform draws.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal_vector(&mut self, dim: usize) -> StateVector {
        StateVector::from_fn(dim, |_, _| self.normal())
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }
}

/// Stream for member `member_index` (0 or 1) of pair `pair_index`.
///
/// All streams share one ChaCha key derived from the master seed and differ
/// in the ChaCha stream id `2 · pair_index + member_index`.
pub fn derive_stream(master_seed: u64, pair_index: u64, member_index: u64) -> NoiseStream {
    assert!(member_index < 2, "a pair has two members");
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(pair_index.wrapping_mul(2).wrapping_add(member_index));
    NoiseStream { rng }
}

fn check_finite(x: &StateVector, step: usize, time: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step, time })
    }
}

/// `f(x, k) + σ(x, k) w` for an explicit noise draw `w`.
pub fn apply_discrete(system: &DiscreteMapSystem, x: &StateVector, k: usize, w: &StateVector) -> Result<StateVector> {
    let mut next = system.eval(x, k);
    if !system.gain.is_zero() {
        next += system.gain.apply(x, k, w);
    }
    check_finite(&next, k, k as f64)?;
    Ok(next)
}

/// One step of `a_{k+1} = f(a_k, k) + σ(a_k, k) w_{k+1}`, `w ~ N(0, Q)` drawn
/// from `stream`. `None` gives the noise-free map.
pub fn step_discrete(
    system: &DiscreteMapSystem,
    x: &StateVector,
    k: usize,
    stream: Option<&mut NoiseStream>,
) -> Result<StateVector> {
    match stream {
        Some(s) if !system.gain.is_zero() => {
            let z = s.normal_vector(system.noise.dim());
            let w = system.noise.factor() * z;
            apply_discrete(system, x, k, &w)
        }
        _ => {
            let next = system.eval(x, k);
            check_finite(&next, k, k as f64)?;
            Ok(next)
        }
    }
}

/// Number of `h` steps in `span`, requiring an integer ratio.
pub fn step_count(span: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::ParameterOutOfRange {
            name: "h",
            value: h,
            reason: "step size must be positive",
        });
    }
    if !(span >= 0.0) {
        return Err(Error::ParameterOutOfRange {
            name: "span",
            value: span,
            reason: "integration interval must be non-negative",
        });
    }
    let n = span / h;
    let r = n.round();
    if (n - r).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::ParameterOutOfRange {
            name: "h",
            value: h,
            reason: "interval length must be an integer multiple of the step",
        });
    }
    Ok(r as usize)
}

/// Advances `x` by `steps` Euler–Maruyama steps from `t0`, calling
/// `observe(j, t_j, x_j)` after each step `j = 1..=steps`.
fn euler_maruyama<O>(
    system: &ContinuousSDESystem,
    x: &mut StateVector,
    t0: f64,
    steps: usize,
    h: f64,
    mut stream: Option<&mut NoiseStream>,
    step_offset: usize,
    mut observe: O,
) -> Result<()>
where
    O: FnMut(usize, f64, &StateVector),
{
    let sqrt_h = h.sqrt();
    let noisy = !system.diffusion.is_zero();
    let d = system.noise_dim();
    for j in 0..steps {
        let t = t0 + j as f64 * h;
        let mut incr = system.eval(x, t) * h;
        if noisy {
            if let Some(s) = stream.as_deref_mut() {
                let z = s.normal_vector(d);
                incr += system.diffusion.apply(x, t, &z) * sqrt_h;
            }
        }
        *x += incr;
        let t_next = t0 + (j + 1) as f64 * h;
        check_finite(x, step_offset + j + 1, t_next)?;
        observe(j + 1, t_next, x);
    }
    Ok(())
}

/// Stored Euler–Maruyama path, `times[j] = t0 + j h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
}

/// Euler–Maruyama on `[t0, t1]`:
/// `x_{j+1} = x_j + f_c(x_j, t_j) h + σ_c(x_j, t_j) √h z_j`, `z_j ~ N(0, I_d)`.
pub fn integrate_sde(
    system: &ContinuousSDESystem,
    x0: &StateVector,
    t0: f64,
    t1: f64,
    h: f64,
    stream: Option<&mut NoiseStream>,
) -> Result<SdePath> {
    let steps = step_count(t1 - t0, h)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(t0);
    states.push(x0.clone());
    let mut x = x0.clone();
    euler_maruyama(system, &mut x, t0, steps, h, stream, 0, |_, t, x| {
        times.push(t);
        states.push(x.clone());
    })?;
    Ok(SdePath { times, states })
}

/// Where on the time grid a sample was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSide {
    /// Just before a reset, `kτ⁻`.
    Pre,
    /// Just after a reset, `kτ⁺` (also used for discrete-map steps).
    Post,
    /// Inside a dwell interval or on a pure SDE grid.
    Interior,
}

impl SampleSide {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleSide::Pre => "pre",
            SampleSide::Post => "post",
            SampleSide::Interior => "interior",
        }
    }

    /// Metric side used to evaluate distances at this sample.
    pub fn metric_side(self) -> Side {
        match self {
            SampleSide::Pre => Side::Left,
            _ => Side::Right,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridSample {
    pub time: f64,
    pub side: SampleSide,
    pub state: StateVector,
}

/// Hybrid trajectory with both one-sided values at every reset.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridTrajectory {
    pub samples: Vec<HybridSample>,
}

impl HybridTrajectory {
    pub fn post_reset(&self) -> impl Iterator<Item = &HybridSample> {
        self.samples.iter().filter(|s| s.side == SampleSide::Post)
    }

    pub fn pre_reset(&self) -> impl Iterator<Item = &HybridSample> {
        self.samples.iter().filter(|s| s.side == SampleSide::Pre)
    }
}

/// Grid layout of a hybrid run.
#[derive(Debug, Clone, Copy)]
struct HybridLayout {
    dwells: usize,
    steps_per_dwell: usize,
    stride: usize,
}

impl HybridLayout {
    fn new(system: &HybridSystem, horizon: f64, h: f64, stride: usize) -> Result<Self> {
        let tau = system.dwell_time;
        if !(tau > 0.0) {
            return Err(Error::ParameterOutOfRange {
                name: "tau",
                value: tau,
                reason: "dwell time must be positive",
            });
        }
        let steps_per_dwell = step_count(tau, h)?;
        if steps_per_dwell == 0 {
            return Err(Error::ParameterOutOfRange {
                name: "h",
                value: h,
                reason: "step must not exceed the dwell time",
            });
        }
        let dwells = step_count(horizon, tau).map_err(|_| Error::ParameterOutOfRange {
            name: "horizon",
            value: horizon,
            reason: "horizon must be a multiple of the dwell time",
        })?;
        Ok(Self {
            dwells,
            steps_per_dwell,
            stride,
        })
    }

    fn records_interior(&self, j: usize) -> bool {
        self.stride > 0 && j < self.steps_per_dwell && j % self.stride == 0
    }

    fn grid(&self, tau: f64, h: f64) -> Vec<(f64, SampleSide)> {
        let mut g = Vec::new();
        for k in 0..=self.dwells {
            let t_k = k as f64 * tau;
            g.push((t_k, SampleSide::Pre));
            g.push((t_k, SampleSide::Post));
            if k == self.dwells {
                break;
            }
            for j in 1..self.steps_per_dwell {
                if self.records_interior(j) {
                    g.push((t_k + j as f64 * h, SampleSide::Interior));
                }
            }
        }
        g
    }
}

/// Runs a hybrid system, calling `record` at every grid sample. Returns
/// early with the failure once the state stops being finite.
fn drive_hybrid<R>(
    system: &HybridSystem,
    x0: &StateVector,
    layout: HybridLayout,
    h: f64,
    mut stream: Option<&mut NoiseStream>,
    mut record: R,
) -> Result<()>
where
    R: FnMut(f64, SampleSide, &StateVector),
{
    let tau = system.dwell_time;
    let mut x = x0.clone();
    for k in 0..=layout.dwells {
        let t_k = k as f64 * tau;
        record(t_k, SampleSide::Pre, &x);
        x = step_discrete(&system.reset, &x, k, stream.as_deref_mut())
            .map_err(|_| Error::NonFiniteState { step: k * layout.steps_per_dwell, time: t_k })?;
        record(t_k, SampleSide::Post, &x);
        if k == layout.dwells {
            break;
        }
        euler_maruyama(
            &system.continuous,
            &mut x,
            t_k,
            layout.steps_per_dwell,
            h,
            stream.as_deref_mut(),
            k * layout.steps_per_dwell,
            |j, t, state| {
                if layout.records_interior(j) {
                    record(t, SampleSide::Interior, state);
                }
            },
        )?;
    }
    Ok(())
}

/// Alternates exact resets at `kτ` (starting with `k = 0`) and Euler–Maruyama
/// flow on `]kτ, (k+1)τ[`, up to and including the reset at `horizon`.
///
/// Interior samples are kept every `record_stride` steps (0 keeps none).
pub fn run_hybrid(
    system: &HybridSystem,
    x0: &StateVector,
    horizon: f64,
    h: f64,
    stream: Option<&mut NoiseStream>,
    record_stride: usize,
) -> Result<HybridTrajectory> {
    let layout = HybridLayout::new(system, horizon, h, record_stride)?;
    let mut samples = Vec::new();
    drive_hybrid(system, x0, layout, h, stream, |time, side, state| {
        samples.push(HybridSample {
            time,
            side,
            state: state.clone(),
        })
    })?;
    Ok(HybridTrajectory { samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    #[default]
    TwoNoisy,
    NoisyVsNoiseFree,
}

/// Initial-condition sampler applied independently to each trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    PointMass { a: Vec<f64>, b: Vec<f64> },
    BoxUniform { lower: Vec<f64>, upper: Vec<f64> },
}

impl InitialCondition {
    pub fn dim(&self) -> usize {
        match self {
            InitialCondition::PointMass { a, .. } => a.len(),
            InitialCondition::BoxUniform { lower, .. } => lower.len(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let lens = match self {
            InitialCondition::PointMass { a, b } => [a.len(), b.len()],
            InitialCondition::BoxUniform { lower, upper } => [lower.len(), upper.len()],
        };
        for len in lens {
            if len != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: len,
                    context: "initial condition",
                });
            }
        }
        Ok(())
    }

    /// Initial state of pair member `member` (0 is `a`, 1 is `b`).
    pub fn sample(&self, member: u64, stream: &mut NoiseStream) -> StateVector {
        match self {
            InitialCondition::PointMass { a, b } => {
                StateVector::from_column_slice(if member == 0 { a } else { b })
            }
            InitialCondition::BoxUniform { lower, upper } => StateVector::from_iterator(
                lower.len(),
                lower.iter().zip(upper).map(|(l, u)| stream.uniform(*l, *u)),
            ),
        }
    }

    /// `E‖a₀ − b₀‖²_M` for a constant metric.
    pub fn expected_ms_distance(&self, m: &Matrix) -> f64 {
        match self {
            InitialCondition::PointMass { a, b } => {
                let d = StateVector::from_column_slice(a) - StateVector::from_column_slice(b);
                d.dot(&(m * &d))
            }
            // a − b has zero mean and twice the per-coordinate variance.
            InitialCondition::BoxUniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .enumerate()
                .map(|(i, (l, u))| m[(i, i)] * 2.0 * (u - l).powi(2) / 12.0)
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub pair_count: usize,
    /// Number of steps for discrete maps, end time otherwise.
    pub horizon: f64,
    /// SDE step; hybrid runs default to `τ/100`.
    #[serde(default)]
    pub sde_step: Option<f64>,
    #[serde(default)]
    pub pairing_mode: PairingMode,
    pub master_seed: u64,
    pub initial: InitialCondition,
    /// Interior samples every `record_stride` SDE steps (0 disables them for
    /// hybrid runs; pure SDE runs always record at least the end point).
    #[serde(default)]
    pub record_stride: usize,
}

impl EnsembleConfig {
    pub fn new(pair_count: usize, horizon: f64, master_seed: u64, initial: InitialCondition) -> Self {
        Self {
            pair_count,
            horizon,
            sde_step: None,
            pairing_mode: PairingMode::TwoNoisy,
            master_seed,
            initial,
            record_stride: 0,
        }
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.sde_step = Some(h);
        self
    }

    pub fn with_pairing(mut self, mode: PairingMode) -> Self {
        self.pairing_mode = mode;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    fn step_for(&self, system: &SystemModel) -> Result<f64> {
        match (self.sde_step, system) {
            (Some(h), _) => Ok(h),
            (None, SystemModel::Hybrid(hs)) => Ok(hs.dwell_time / 100.0),
            (None, SystemModel::Continuous(_)) => Err(Error::Config("continuous ensembles need sde_step".into())),
            (None, SystemModel::Discrete(_)) => Ok(1.0),
        }
    }
}

/// Failure of one trajectory pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair_index: usize,
    pub member: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub time: f64,
    pub side: SampleSide,
    pub mean_sq_dist: f64,
    pub stderr: f64,
    pub n_alive: usize,
}

/// Mean and standard error of `d²_M(a(t), b(t))` over pairs, per grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub points: Vec<GridPoint>,
    pub pair_count: usize,
    pub failures: Vec<PairFailure>,
}

/// Per-grid-point comparison against a bound trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub time: f64,
    pub side: SampleSide,
    pub empirical: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

impl EnsembleStats {
    pub const CSV_HEADER: &'static str = "time,side,mean_sq_dist,stderr,n_alive";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.time,
                p.side.as_str(),
                p.mean_sq_dist,
                p.stderr,
                p.n_alive
            ));
        }
        out
    }

    /// Checks `empirical ≤ bound + slack · stderr` at every grid point with at
    /// least one surviving pair.
    pub fn check_bound(&self, report: &BoundReport, slack: f64) -> Vec<BoundCheck> {
        self.points
            .iter()
            .filter(|p| p.n_alive > 0)
            .map(|p| {
                let bound = bound_at(report, p.time, p.side);
                BoundCheck {
                    time: p.time,
                    side: p.side,
                    empirical: p.mean_sq_dist,
                    stderr: p.stderr,
                    bound,
                    pass: p.mean_sq_dist <= bound + slack * p.stderr,
                }
            })
            .collect()
    }

    pub fn value_at(&self, time: f64, side: SampleSide) -> Option<&GridPoint> {
        self.points
            .iter()
            .find(|p| p.side == side && (p.time - time).abs() <= 1e-9 * time.abs().max(1.0))
    }
}

/// Evaluates a bound report on the ensemble grid.
pub fn bound_at(report: &BoundReport, time: f64, side: SampleSide) -> f64 {
    match report.base_tag.unwrap_or(report.theorem_tag) {
        TheoremTag::ContinuousInterval => report.continuous_at(time),
        _ => report.at_time(time, side.metric_side()),
    }
}

fn ensemble_grid(system: &SystemModel, config: &EnsembleConfig, h: f64) -> Result<Vec<(f64, SampleSide)>> {
    match system {
        SystemModel::Discrete(_) => {
            let steps = step_count(config.horizon, 1.0)?;
            Ok((0..=steps).map(|k| (k as f64, SampleSide::Post)).collect())
        }
        SystemModel::Continuous(_) => {
            let steps = step_count(config.horizon, h)?;
            let stride = config.record_stride.max(1);
            let mut g = vec![(0.0, SampleSide::Interior)];
            for j in 1..=steps {
                if j % stride == 0 || j == steps {
                    g.push((j as f64 * h, SampleSide::Interior));
                }
            }
            Ok(g)
        }
        SystemModel::Hybrid(hs) => {
            let layout = HybridLayout::new(hs, config.horizon, h, config.record_stride)?;
            Ok(layout.grid(hs.dwell_time, h))
        }
    }
}

/// Simulates one trajectory and returns its recorded states (truncated at a
/// failure, which is returned alongside).
fn simulate_member(
    system: &SystemModel,
    config: &EnsembleConfig,
    h: f64,
    x0: StateVector,
    stream: Option<&mut NoiseStream>,
) -> (Vec<StateVector>, Option<Error>) {
    let mut states = Vec::new();
    let outcome = match system {
        SystemModel::Discrete(sys) => {
            let steps = config.horizon.round() as usize;
            let mut stream = stream;
            let mut x = x0;
            states.push(x.clone());
            let mut res = Ok(());
            for k in 0..steps {
                match step_discrete(sys, &x, k, stream.as_deref_mut()) {
                    Ok(next) => {
                        x = next;
                        states.push(x.clone());
                    }
                    Err(e) => {
                        res = Err(e);
                        break;
                    }
                }
            }
            res
        }
        SystemModel::Continuous(sys) => {
            let steps = (config.horizon / h).round() as usize;
            let stride = config.record_stride.max(1);
            let mut x = x0;
            states.push(x.clone());
            euler_maruyama(sys, &mut x, 0.0, steps, h, stream, 0, |j, _, state| {
                if j % stride == 0 || j == steps {
                    states.push(state.clone());
                }
            })
        }
        SystemModel::Hybrid(hs) => match HybridLayout::new(hs, config.horizon, h, config.record_stride) {
            Ok(layout) => drive_hybrid(hs, &x0, layout, h, stream, |_, _, state| states.push(state.clone())),
            Err(e) => Err(e),
        },
    };
    (states, outcome.err())
}

/// Simulates `pair_count` independent pairs and reduces `d²_M` per grid time.
///
/// Members of a pair use distinct noise streams; in noisy-vs-noise-free mode
/// the second member runs without noise. A pair whose state becomes
/// non-finite is recorded in `failures` and drops out of `n_alive` from the
/// failing sample on.
pub fn run_pair_ensemble(system: &SystemModel, config: &EnsembleConfig, metric: &MetricSpec) -> Result<EnsembleStats> {
    if config.pair_count == 0 {
        return Err(Error::Config("pair_count must be at least 1".into()));
    }
    let dim = system.dim();
    config.initial.validate(dim)?;
    if metric.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: metric.dim(),
            context: "ensemble metric",
        });
    }
    let h = config.step_for(system)?;
    let grid = ensemble_grid(system, config, h)?;
    let metrics: Vec<Matrix> = grid.iter().map(|(t, side)| metric.value(*t, side.metric_side())).collect();

    let per_pair: Vec<(Vec<f64>, Vec<PairFailure>)> = (0..config.pair_count)
        .into_par_iter()
        .map(|i| {
            let mut sa = derive_stream(config.master_seed, i as u64, 0);
            let mut sb = derive_stream(config.master_seed, i as u64, 1);
            let a0 = config.initial.sample(0, &mut sa);
            let b0 = config.initial.sample(1, &mut sb);
            let (ta, ea) = simulate_member(system, config, h, a0, Some(&mut sa));
            let b_stream = match config.pairing_mode {
                PairingMode::TwoNoisy => Some(&mut sb),
                PairingMode::NoisyVsNoiseFree => None,
            };
            let (tb, eb) = simulate_member(system, config, h, b0, b_stream);
            let alive = ta.len().min(tb.len()).min(grid.len());
            let d2: Vec<f64> = (0..alive)
                .map(|g| {
                    let d = &ta[g] - &tb[g];
                    d.dot(&(&metrics[g] * &d))
                })
                .collect();
            let failures = [(0u64, ea), (1u64, eb)]
                .into_iter()
                .filter_map(|(member, e)| {
                    e.map(|e| PairFailure {
                        pair_index: i,
                        member,
                        message: e.to_string(),
                    })
                })
                .collect();
            (d2, failures)
        })
        .collect();

    let points = grid
        .iter()
        .enumerate()
        .map(|(g, (time, side))| {
            let (mut n, mut sum) = (0usize, 0.0);
            for (d2, _) in &per_pair {
                if let Some(v) = d2.get(g) {
                    n += 1;
                    sum += v;
                }
            }
            let mean = if n > 0 { sum / n as f64 } else { f64::NAN };
            let mut ss = 0.0;
            for (d2, _) in &per_pair {
                if let Some(v) = d2.get(g) {
                    ss += (v - mean).powi(2);
                }
            }
            let stderr = if n > 1 {
                (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
            } else {
                0.0
            };
            GridPoint {
                time: *time,
                side: *side,
                mean_sq_dist: mean,
                stderr,
                n_alive: n,
            }
        })
        .collect();

    Ok(EnsembleStats {
        points,
        pair_count: config.pair_count,
        failures: per_pair.into_iter().flat_map(|(_, f)| f).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::{GaussianNoiseSpec, NoiseGain};

    fn v(xs: &[f64]) -> StateVector {
        StateVector::from_column_slice(xs)
    }

    #[test]
    fn discrete_step_examples() {
        let zero = DiscreteMapSystem::new(2, |x, _| x * 0.0);
        assert_eq!(step_discrete(&zero, &v(&[3.0, 1.0]), 0, None).unwrap(), v(&[0.0, 0.0]));
        let half = DiscreteMapSystem::new(1, |x, _| x * 0.5);
        let mut s = NoiseStream::from_seed(1);
        assert_eq!(step_discrete(&half, &v(&[2.0]), 0, Some(&mut s)).unwrap(), v(&[1.0]));
    }

    #[test]
    fn discrete_step_moments() {
        let sys = DiscreteMapSystem::new(1, |x, _| x * 0.5)
            .with_noise(NoiseGain::Isotropic(1.0), GaussianNoiseSpec::standard(1));
        let mut s = NoiseStream::from_seed(42);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|k| step_discrete(&sys, &v(&[0.0]), k, Some(&mut s)).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn non_finite_state_reported() {
        let sys = DiscreteMapSystem::new(1, |x, _| x.map(|v| 1.0 / v));
        let err = step_discrete(&sys, &v(&[0.0]), 4, None).unwrap_err();
        assert_eq!(err, Error::NonFiniteState { step: 4, time: 4.0 });
    }

    #[test]
    fn constant_sde_path() {
        let sys = ContinuousSDESystem::new(2, |x, _| x * 0.0);
        let path = integrate_sde(&sys, &v(&[1.0, -1.0]), 0.0, 1.0, 0.1, None).unwrap();
        assert_eq!(path.states.len(), 11);
        assert!(path.states.iter().all(|s| *s == v(&[1.0, -1.0])));
        assert!(integrate_sde(&sys, &v(&[1.0, -1.0]), 0.0, 1.0, 0.3, None).is_err());
    }

    #[test]
    fn exponential_decay_strong_order() {
        let sys = ContinuousSDESystem::new(1, |x, _| -x);
        let exact = (-1.0f64).exp();
        let err = |h: f64| (integrate_sde(&sys, &v(&[1.0]), 0.0, 1.0, h, None).unwrap().states.last().unwrap()[0] - exact).abs();
        let (e1, e2) = (err(0.01), err(0.005));
        assert!(e1 <= 3.0 * 0.01);
        let ratio = e1 / e2;
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn hybrid_pure_reset_iteration() {
        let flow = ContinuousSDESystem::new(1, |x, _| x * 0.0);
        let reset = DiscreteMapSystem::new(1, |x, _| x * 0.5);
        let sys = HybridSystem::new(flow, reset, 1.0);
        let traj = run_hybrid(&sys, &v(&[1.0]), 3.0, 0.25, None, 0).unwrap();
        let post: Vec<f64> = traj.post_reset().map(|s| s.state[0]).collect();
        assert_eq!(post, vec![0.5, 0.25, 0.125, 0.0625]);
        let pre: Vec<f64> = traj.pre_reset().map(|s| s.state[0]).collect();
        assert_eq!(pre, vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn hybrid_identity_reset_matches_sde() {
        let flow = ContinuousSDESystem::new(1, |x, _| -x);
        let reset = DiscreteMapSystem::new(1, |x, _| x.clone());
        let sys = HybridSystem::new(flow.clone(), reset, 0.5);
        let traj = run_hybrid(&sys, &v(&[1.0]), 2.0, 0.01, None, 0).unwrap();
        let path = integrate_sde(&flow, &v(&[1.0]), 0.0, 2.0, 0.01, None).unwrap();
        let end = traj.samples.last().unwrap().state[0];
        assert!((end - path.states.last().unwrap()[0]).abs() < 1e-12);
    }

    #[test]
    fn hybrid_grid_matches_recording() {
        let flow = ContinuousSDESystem::new(1, |x, _| -x);
        let reset = DiscreteMapSystem::new(1, |x, _| x * 0.5);
        let sys = HybridSystem::new(flow, reset, 0.5);
        let traj = run_hybrid(&sys, &v(&[1.0]), 2.0, 0.05, None, 3).unwrap();
        let layout = HybridLayout::new(&sys, 2.0, 0.05, 3).unwrap();
        let grid = layout.grid(0.5, 0.05);
        assert_eq!(grid.len(), traj.samples.len());
        for ((t, side), s) in grid.iter().zip(&traj.samples) {
            assert!((t - s.time).abs() < 1e-12);
            assert_eq!(*side, s.side);
        }
    }

    #[test]
    fn silent_identical_pairs_have_zero_distance() {
        let sys = SystemModel::Discrete(DiscreteMapSystem::new(1, |x, _| x * 0.9));
        let cfg = EnsembleConfig::new(10, 5.0, 1, InitialCondition::PointMass { a: vec![1.0], b: vec![1.0] });
        let stats = run_pair_ensemble(&sys, &cfg, &MetricSpec::identity(1)).unwrap();
        assert!(stats.points.iter().all(|p| p.mean_sq_dist == 0.0 && p.n_alive == 10));
    }

    #[test]
    fn stream_determinism_and_independence() {
        let mut a = derive_stream(9, 3, 0);
        let mut b = derive_stream(9, 3, 0);
        assert_eq!(a.normal_vector(5), b.normal_vector(5));

        let n = 100_000;
        let mut s0 = derive_stream(7, 0, 0);
        let mut s1 = derive_stream(7, 0, 1);
        let xs: Vec<f64> = (0..n).map(|_| s0.normal()).collect();
        let ys: Vec<f64> = (0..n).map(|_| s1.normal()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>();
        assert!((cov / (vx * vy).sqrt()).abs() < 0.01);
    }

    #[test]
    fn failures_are_counted() {
        // Doubles every step; overflows to infinity after ~1100 steps.
        let sys = SystemModel::Discrete(DiscreteMapSystem::new(1, |x, _| x * 2.0));
        let cfg = EnsembleConfig::new(3, 1200.0, 1, InitialCondition::PointMass { a: vec![1.0], b: vec![0.5] });
        let stats = run_pair_ensemble(&sys, &cfg, &MetricSpec::identity(1)).unwrap();
        assert_eq!(stats.failures.len(), 6);
        assert!(stats.failures.iter().all(|f| f.pair_index < 3));
        assert_eq!(stats.points[0].n_alive, 3);
        assert_eq!(stats.points.last().unwrap().n_alive, 0);
    }

    #[test]
    fn box_initial_expected_distance() {
        let ic = InitialCondition::BoxUniform {
            lower: vec![-1.0; 6],
            upper: vec![1.0; 6],
        };
        assert!((ic.expected_ms_distance(&Matrix::identity(6, 6)) - 4.0).abs() < 1e-12);
    }
}
