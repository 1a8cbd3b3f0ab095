use stocontract_core::bounds::{continuous_bound, discrete_ms_bound, hybrid_bound, hybrid_bound_neutral};
use stocontract_core::simulate::{
    run_hybrid, run_pair_ensemble, EnsembleConfig, InitialCondition, PairingMode, SampleSide,
};
use stocontract_core::state_space::{
    ContinuousSDESystem, DiscreteMapSystem, GaussianNoiseSpec, HybridSystem, MetricSpec, NoiseGain, SystemModel,
};
use stocontract_core::{Matrix, StateVector};

fn ou(rho: f64, sigma: f64) -> SystemModel {
    SystemModel::Discrete(
        DiscreteMapSystem::linear(Matrix::from_element(1, 1, rho))
            .with_noise(NoiseGain::Isotropic(sigma), GaussianNoiseSpec::standard(1)),
    )
}

fn scalar_hybrid(a: f64, rho: f64, tau: f64, sigma_c: f64, sigma_d: f64) -> HybridSystem {
    let flow = ContinuousSDESystem::linear(Matrix::from_element(1, 1, a)).with_diffusion(NoiseGain::Isotropic(sigma_c));
    let reset = DiscreteMapSystem::linear(Matrix::from_element(1, 1, rho))
        .with_noise(NoiseGain::Isotropic(sigma_d), GaussianNoiseSpec::standard(1));
    HybridSystem::new(flow, reset, tau)
}

fn origin() -> InitialCondition {
    InitialCondition::PointMass { a: vec![0.0], b: vec![0.0] }
}

/// `E d²` of a pair started at the same point, one entry per reset side.
fn exact_moments(a: f64, rho: f64, tau: f64, cc: f64, cd: f64, dwells: usize) -> Vec<(f64, SampleSide, f64)> {
    let mut out = Vec::new();
    let mut m = 0.0;
    for k in 0..=dwells {
        let t = k as f64 * tau;
        out.push((t, SampleSide::Pre, m));
        m = rho * rho * m + 2.0 * cd;
        out.push((t, SampleSide::Post, m));
        m = if a == 0.0 {
            m + 2.0 * cc * tau
        } else {
            let g = (2.0 * a * tau).exp();
            g * m + cc * (g - 1.0) / a
        };
    }
    out
}

#[test]
fn ou_stationary_moment_matches_asymptote() {
    let cfg = EnsembleConfig::new(4000, 60.0, 101, origin());
    let stats = run_pair_ensemble(&ou(0.5, 1.0), &cfg, &MetricSpec::identity(1)).unwrap();
    let bound = discrete_ms_bound(0.25, 1.0, 0.0).unwrap();
    assert!((bound.asymptotic_bound - 8.0 / 3.0).abs() < 1e-12);
    let last = stats.points.last().unwrap();
    assert!((last.mean_sq_dist - 8.0 / 3.0).abs() <= 4.0 * last.stderr, "{last:?}");
    assert!(stats.check_bound(&bound, 3.0).iter().all(|c| c.pass));
}

#[test]
fn noisy_vs_noise_free_pair_halves() {
    let cfg = EnsembleConfig::new(4000, 60.0, 102, origin()).with_pairing(PairingMode::NoisyVsNoiseFree);
    let stats = run_pair_ensemble(&ou(0.5, 1.0), &cfg, &MetricSpec::identity(1)).unwrap();
    let last = stats.points.last().unwrap();
    assert!((last.mean_sq_dist - 4.0 / 3.0).abs() <= 4.0 * last.stderr, "{last:?}");
}

#[test]
fn brownian_pair_spreads_linearly() {
    let sys = SystemModel::Continuous(ContinuousSDESystem::linear(Matrix::zeros(1, 1)).with_diffusion(NoiseGain::Isotropic(1.0)));
    let cfg = EnsembleConfig::new(4000, 2.0, 103, origin()).with_step(0.01).with_stride(50);
    let stats = run_pair_ensemble(&sys, &cfg, &MetricSpec::identity(1)).unwrap();
    for p in stats.points.iter().filter(|p| p.time > 0.0) {
        assert!((p.mean_sq_dist - 2.0 * p.time).abs() <= 4.0 * p.stderr, "{p:?}");
    }
    // Zero rate: the continuous bound grows as 2 C_c t.
    let b = continuous_bound(0.0, 1.0, 0.0).unwrap();
    assert!((b.at_time(1.5, stocontract_core::state_space::Side::Right) - 3.0).abs() < 1e-12);
}

#[test]
fn hybrid_ensemble_matches_exact_moments() {
    let (a, rho, tau) = (-1.0, 0.5, 0.5);
    let sys = SystemModel::Hybrid(scalar_hybrid(a, rho, tau, 1.0, 1.0));
    let cfg = EnsembleConfig::new(3000, 3.0, 104, origin());
    let stats = run_pair_ensemble(&sys, &cfg, &MetricSpec::identity(1)).unwrap();
    for (t, side, m) in exact_moments(a, rho, tau, 1.0, 1.0, 6) {
        let p = stats.value_at(t, side).unwrap();
        assert!((p.mean_sq_dist - m).abs() <= 4.0 * p.stderr + 0.02 * m, "t={t} {side:?}: {} vs {m}", p.mean_sq_dist);
    }
    let bound = hybrid_bound(rho * rho, -a, 1.0, 1.0, tau, 0.0).unwrap();
    assert!(stats.check_bound(&bound, 3.0).iter().all(|c| c.pass));
}

#[test]
fn euler_maruyama_weak_error_small() {
    let sys = SystemModel::Hybrid(scalar_hybrid(-1.0, 0.5, 0.5, 1.0, 1.0));
    let coarse = EnsembleConfig::new(3000, 2.0, 105, origin()).with_step(0.01);
    let fine = EnsembleConfig::new(3000, 2.0, 106, origin()).with_step(0.005);
    let metric = MetricSpec::identity(1);
    let c = run_pair_ensemble(&sys, &coarse, &metric).unwrap();
    let f = run_pair_ensemble(&sys, &fine, &metric).unwrap();
    for side in [SampleSide::Pre, SampleSide::Post] {
        let (pc, pf) = (c.value_at(2.0, side).unwrap(), f.value_at(2.0, side).unwrap());
        let se = (pc.stderr.powi(2) + pf.stderr.powi(2)).sqrt();
        assert!((pc.mean_sq_dist - pf.mean_sq_dist).abs() <= 4.0 * se, "{pc:?} {pf:?}");
    }
}

#[test]
fn post_reset_moments_respect_published_constants() {
    // Exact recursion, no sampling: post-reset values stay below the bound.
    for (a, beta_sqrt) in [(-1.0, 0.5), (0.0, 0.5), (1.0, 0.5), (0.5, 0.3)] {
        let tau: f64 = 0.5;
        let moments = exact_moments(a, beta_sqrt, tau, 1.0, 1.0, 40);
        let bound = hybrid_bound(beta_sqrt * beta_sqrt, -a, 1.0, 1.0, tau, 0.0).unwrap();
        for (t, side, m) in moments.iter().filter(|e| e.1 == SampleSide::Post) {
            let b = bound.at_time(*t, side.metric_side());
            assert!(*m <= b * (1.0 + 1e-12), "a={a} t={t}: {m} > {b}");
        }
    }
}

#[test]
fn pre_reset_peak_exceeds_neutral_constant() {
    // Zero drift: the pre-reset limit (2 C_d + 2 C_c τ)/(1 − β) beats C₂
    // whenever β C_d < (1 − β)² C_c τ.
    let (beta, tau) = (0.25, 0.5);
    let moments = exact_moments(0.0, 0.5, tau, 1.0, 1.0, 200);
    let peak = moments.iter().filter(|e| e.1 == SampleSide::Pre).map(|e| e.2).fold(0.0, f64::max);
    let c2 = hybrid_bound_neutral(beta, 1.0, 1.0, tau, 0.0).unwrap().asymptotic_bound;
    assert!((peak - 3.0 / 0.75).abs() < 1e-9);
    assert!(peak > c2, "{peak} vs {c2}");
}

#[test]
fn hybrid_records_both_sides_of_each_reset() {
    let sys = scalar_hybrid(-1.0, 0.5, 0.25, 0.0, 0.0);
    let traj = run_hybrid(&sys, &StateVector::from_element(1, 1.0), 1.0, 0.0025, None, 0).unwrap();
    let pre: Vec<f64> = traj.pre_reset().map(|s| s.time).collect();
    let post: Vec<f64> = traj.post_reset().map(|s| s.time).collect();
    assert_eq!(pre, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(pre, post);
    // Noise-free: each dwell multiplies by ρ (1 − h)^{τ/h}.
    let last = traj.post_reset().last().unwrap().state[0];
    let per_dwell = 0.5 * (1.0f64 - 0.0025).powi(100);
    assert!((last - 0.5 * per_dwell.powi(4)).abs() < 1e-12);
}
