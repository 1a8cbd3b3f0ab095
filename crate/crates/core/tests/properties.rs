use std::sync::Arc;

use proptest::prelude::*;

use stocontract_core::bounds::{
    apply_noisefree_corollary, classify_regime, discrete_distance_bound, discrete_ms_bound, hybrid_bound,
    hybrid_bound_contracting, hybrid_bound_expanding, hybrid_bound_neutral, TheoremTag,
};
use stocontract_core::certify::{
    estimate_continuous_rate, estimate_discrete_rate, noise_bound_continuous, noise_bound_discrete, SamplingRegion,
};
use stocontract_core::geometry::{
    contraction_factor_at, contraction_factor_of, curve_length, generalized_jacobian_of, metric_distance, SampledCurve,
};
use stocontract_core::linalg;
use stocontract_core::state_space::{
    factor_metric, validate_system, ContinuousSDESystem, DiscreteMapSystem, GaussianNoiseSpec, MetricSpec, NoiseGain,
    Side, SystemModel,
};
use stocontract_core::{Matrix, StateVector};

fn square(n: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, n * n).prop_map(move |v| Matrix::from_row_slice(n, n, &v))
}

/// `BᵀB + εI`, conditioned well enough for 1e-10 factor checks.
fn spd(n: usize) -> impl Strategy<Value = Matrix> {
    (square(n, 2.0), 0.05f64..1.0).prop_map(move |(b, eps)| b.transpose() * &b + Matrix::identity(n, n) * eps)
}

fn vector(n: usize, scale: f64) -> impl Strategy<Value = StateVector> {
    prop::collection::vec(-scale..scale, n).prop_map(|v| StateVector::from_vec(v))
}

fn nonlinear_map(a: Matrix) -> DiscreteMapSystem {
    let n = a.nrows();
    let a2 = a.clone();
    DiscreteMapSystem::new(n, move |x, _| &a * x + x.map(|v| 0.3 * v.tanh()))
        .with_jacobian(move |x, _| &a2 + Matrix::from_diagonal(&x.map(|v| 0.3 / v.cosh().powi(2))))
        .with_noise(
            NoiseGain::Matrix {
                noise_dim: n,
                gain: Arc::new(move |x: &StateVector, _| Matrix::from_diagonal(&x.map(|v| 1.0 + v.sin()))),
            },
            GaussianNoiseSpec::standard(n),
        )
}

fn nonlinear_flow(a: Matrix) -> ContinuousSDESystem {
    let n = a.nrows();
    let a2 = a.clone();
    ContinuousSDESystem::new(n, move |x, _| &a * x - x.map(|v| v * v * v))
        .with_jacobian(move |x, _| &a2 - Matrix::from_diagonal(&x.map(|v| 3.0 * v * v)))
        .with_diffusion(NoiseGain::Matrix {
            noise_dim: n,
            gain: Arc::new(move |x: &StateVector, _| Matrix::from_diagonal(&x.map(|v| v.cos()))),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn factorization_reproduces_metric(n in 1usize..6, seed in any::<u64>()) {
        let m = spd_from_seed(n, seed);
        let theta = factor_metric(&m).unwrap();
        let err = linalg::inf_norm(&(theta.transpose() * &theta - &m));
        prop_assert!(err <= 1e-10 * linalg::inf_norm(&m));
    }

    #[test]
    fn scheduled_metric_both_sides_spd(base in spd(3), amp in 0.0f64..0.04, tau in 0.1f64..2.0, k in 0usize..5) {
        let d: Arc<dyn Fn(f64) -> Matrix + Send + Sync> =
            Arc::new(move |s| Matrix::identity(3, 3) * (amp * (1.0 + s.sin())));
        let metric = MetricSpec::scheduled(base, tau, Some(d)).unwrap();
        let t = k as f64 * tau;
        for side in [Side::Left, Side::Right] {
            let m = metric.value(t, side);
            prop_assert!(linalg::lambda_min_sym(&m) > 0.0);
            prop_assert!(metric.factor(t, side).is_ok());
        }
    }

    #[test]
    fn validation_is_pure(rho in -2.0f64..2.0, tau in -1.0f64..1.0) {
        let sys = SystemModel::Hybrid(stocontract_core::state_space::HybridSystem::new(
            ContinuousSDESystem::linear(Matrix::from_element(1, 1, rho)),
            DiscreteMapSystem::linear(Matrix::from_element(1, 1, rho)),
            tau,
        ));
        prop_assert_eq!(validate_system(&sys), validate_system(&sys));
    }

    #[test]
    fn linear_image_distance_contracts(
        a in square(3, 1.5), m1 in spd(3), m2 in spd(3), u in vector(3, 5.0), v in vector(3, 5.0),
    ) {
        let t1 = factor_metric(&m1).unwrap();
        let t2 = factor_metric(&m2).unwrap();
        let beta = contraction_factor_of(&generalized_jacobian_of(&a, &t1, &t2).unwrap());
        let lhs = metric_distance(&(&a * &u), &(&a * &v), &m2).unwrap().powi(2);
        let rhs = beta * metric_distance(&u, &v, &m1).unwrap().powi(2);
        prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-9, "lhs {} rhs {}", lhs, rhs);
    }

    #[test]
    fn image_length_bounded(
        a in square(2, 1.0), m1 in spd(2), m2 in spd(2), p in vector(2, 2.0), q in vector(2, 2.0), bend in -1.0f64..1.0,
    ) {
        let f = move |x: &StateVector| &a * x + x.map(|v| 0.2 * v.sin());
        let normal = StateVector::from_column_slice(&[-(q[1] - p[1]), q[0] - p[0]]);
        let gamma = |u: f64| &p + (&q - &p) * u + &normal * (bend * u * (1.0 - u));
        let curve = SampledCurve::uniform(&gamma, 2001).unwrap();
        let finer = SampledCurve::uniform(&gamma, 4001).unwrap();
        let t1 = factor_metric(&m1).unwrap();
        let t2 = factor_metric(&m2).unwrap();
        let beta = curve
            .points()
            .iter()
            .map(|x| contraction_factor_at(&f, x, &t1, &t2).unwrap())
            .fold(0.0, f64::max);
        let image = curve.map(&f).unwrap();
        let l_img = curve_length(&image, &m2).unwrap();
        let l = curve_length(&curve, &m1).unwrap();
        // Doubling the partition leaves both lengths unchanged to 1e-6.
        let l_fine = curve_length(&finer, &m1).unwrap();
        let l_img_fine = curve_length(&finer.map(&f).unwrap(), &m2).unwrap();
        prop_assert!((l_fine - l).abs() <= 1e-6 * l_fine.max(1e-12));
        prop_assert!((l_img_fine - l_img).abs() <= 1e-6 * l_img_fine.max(1e-12));
        prop_assert!(l_img <= beta.sqrt() * l * (1.0 + 1e-6) + 1e-9, "{} vs {}", l_img, beta.sqrt() * l);
    }

    #[test]
    fn triangle_inequality(m in spd(4), x in vector(4, 10.0), y in vector(4, 10.0), z in vector(4, 10.0)) {
        let dxz = metric_distance(&x, &z, &m).unwrap();
        let dxy = metric_distance(&x, &y, &m).unwrap();
        let dyz = metric_distance(&y, &z, &m).unwrap();
        prop_assert!(dxz <= dxy + dyz + 1e-12 * (1.0 + dxz));
    }
}

fn spd_from_seed(n: usize, seed: u64) -> Matrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
    b.transpose() * &b + Matrix::identity(n, n) * rng.random_range(0.05..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn certify_monotone_in_samples(a in square(2, 1.0), seed in any::<u64>(), n in 4usize..40) {
        let small = SamplingRegion::boxed(vec![-2.0; 2], vec![2.0; 2], n, seed);
        let large = SamplingRegion::boxed(vec![-2.0; 2], vec![2.0; 2], 3 * n, seed);
        let i2 = Matrix::identity(2, 2);
        let map = nonlinear_map(a.clone());
        let b_s = estimate_discrete_rate(&map, &i2, &i2, &small, 0).unwrap().value;
        let b_l = estimate_discrete_rate(&map, &i2, &i2, &large, 0).unwrap().value;
        prop_assert!(b_l >= b_s);
        let c_s = noise_bound_discrete(&map, &i2, &small, 0).unwrap().value;
        let c_l = noise_bound_discrete(&map, &i2, &large, 0).unwrap().value;
        prop_assert!(c_l >= c_s);

        let flow = nonlinear_flow(a);
        let metric = MetricSpec::identity(2);
        let l_s = estimate_continuous_rate(&flow, &metric, &small, 0.0).unwrap().value;
        let l_l = estimate_continuous_rate(&flow, &metric, &large, 0.0).unwrap().value;
        prop_assert!(-l_l >= -l_s);
        let cc_s = noise_bound_continuous(&flow, &i2, &small, 0.0).unwrap().value;
        let cc_l = noise_bound_continuous(&flow, &i2, &large, 0.0).unwrap().value;
        prop_assert!(cc_l >= cc_s);
    }

    #[test]
    fn linear_estimates_region_independent(a in square(3, 1.5), m in spd(3), seed in any::<u64>()) {
        let r1 = SamplingRegion::boxed(vec![-1.0; 3], vec![1.0; 3], 16, seed);
        let r2 = SamplingRegion::sphere(vec![10.0, -3.0, 2.0], 50.0, 64, seed ^ 7);
        let sys = DiscreteMapSystem::linear(a.clone());
        let b1 = estimate_discrete_rate(&sys, &m, &m, &r1, 0).unwrap().value;
        let b2 = estimate_discrete_rate(&sys, &m, &m, &r2, 0).unwrap().value;
        prop_assert!((b1 - b2).abs() <= 1e-12 * b1.abs().max(1e-300));

        let metric = MetricSpec::constant(m).unwrap();
        let flow = ContinuousSDESystem::linear(a.clone());
        let l1 = estimate_continuous_rate(&flow, &metric, &r1, 0.0).unwrap().value;
        let l2 = estimate_continuous_rate(&flow, &metric, &r2, 0.0).unwrap().value;
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
    }

    #[test]
    fn reversed_linear_flow_rate(a in square(3, 2.0), seed in any::<u64>()) {
        let region = SamplingRegion::boxed(vec![-1.0; 3], vec![1.0; 3], 8, seed);
        let metric = MetricSpec::identity(3);
        let rev = ContinuousSDESystem::linear(-a.clone());
        let l_rev = estimate_continuous_rate(&rev, &metric, &region, 0.0).unwrap().value;
        let sym = linalg::symmetric_part(&a);
        // λ̂(−f) = −λ_max(−A_s) = λ_min(A_s).
        prop_assert!((l_rev - linalg::lambda_min_sym(&sym)).abs() <= 1e-12 * (1.0 + l_rev.abs()));
    }

    #[test]
    fn scalar_flow_rate_antisymmetric(a in -5.0f64..5.0, seed in any::<u64>()) {
        let region = SamplingRegion::boxed(vec![-1.0], vec![1.0], 8, seed);
        let metric = MetricSpec::identity(1);
        let fwd = estimate_continuous_rate(&ContinuousSDESystem::linear(Matrix::from_element(1, 1, a)), &metric, &region, 0.0).unwrap();
        let rev = estimate_continuous_rate(&ContinuousSDESystem::linear(Matrix::from_element(1, 1, -a)), &metric, &region, 0.0).unwrap();
        prop_assert_eq!(fwd.value, -rev.value);
    }
}

fn oracle_regime(beta: f64, lambda: f64, tau: f64) -> TheoremTag {
    if lambda > 0.0 {
        TheoremTag::Thm2
    } else if lambda == 0.0 {
        TheoremTag::Thm3
    } else {
        let threshold = (-2.0 * lambda.abs() * tau).exp();
        if (beta - threshold).abs() <= 1e-12 * threshold {
            TheoremTag::Thm4LinearGrowth
        } else if beta < threshold {
            TheoremTag::Thm4Bounded
        } else {
            TheoremTag::Thm4Unbounded
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn c2_increasing_in_tau(beta in 0.0f64..0.99, cd in 0.0f64..5.0, cc in 0.01f64..5.0, tau in 0.01f64..5.0, dt in 1e-3f64..1.0) {
        let lo = hybrid_bound_neutral(beta, cd, cc, tau, 0.0).unwrap().asymptotic_bound;
        let hi = hybrid_bound_neutral(beta, cd, cc, tau + dt, 0.0).unwrap().asymptotic_bound;
        prop_assert!(hi > lo);
    }

    #[test]
    fn c3_increasing_in_tau(beta in 0.0f64..0.5, l in 0.01f64..2.0, cd in 0.0f64..5.0, cc in 0.01f64..5.0, frac in 0.05f64..0.95) {
        // Stay inside the bounded regime: β e^{2|λ|τ} < 1.
        let tau_max = if beta > 0.0 { (-beta.ln()) / (2.0 * l) } else { 5.0 };
        let tau = frac * tau_max * 0.9;
        let dt = 0.05 * tau;
        let lo = hybrid_bound_expanding(beta, -l, cd, cc, tau, 0.0).unwrap();
        let hi = hybrid_bound_expanding(beta, -l, cd, cc, tau + dt, 0.0).unwrap();
        prop_assert_eq!(lo.theorem_tag, TheoremTag::Thm4Bounded);
        prop_assert!(hi.asymptotic_bound > lo.asymptotic_bound);
    }

    #[test]
    fn asymptotes_finite_near_neutral(beta in 0.0f64..0.9, cd in 0.0f64..5.0, cc in 0.0f64..5.0, tau in 0.01f64..2.0) {
        let eps = 1e-9;
        let plus = hybrid_bound_contracting(beta, eps, cd, cc, tau, 0.0).unwrap();
        let minus = hybrid_bound_expanding(beta, -eps, cd, cc, tau, 0.0).unwrap();
        prop_assert!(plus.asymptotic_bound.is_finite());
        prop_assert!(minus.asymptotic_bound.is_finite());
        prop_assert_eq!(plus.theorem_tag, classify_regime(beta, eps, tau));
        prop_assert_eq!(minus.theorem_tag, classify_regime(beta, -eps, tau));
    }

    #[test]
    fn classifier_matches_oracle(beta in 0.0f64..1.0, lambda in -3.0f64..3.0, tau in 0.001f64..3.0, zero in any::<bool>()) {
        let lambda = if zero { 0.0 } else { lambda };
        prop_assert_eq!(classify_regime(beta, lambda, tau), oracle_regime(beta, lambda, tau));
        let report = hybrid_bound(beta, lambda, 1.0, 1.0, tau, 0.0).unwrap();
        prop_assert_eq!(report.theorem_tag, classify_regime(beta, lambda, tau));
    }

    #[test]
    fn trajectories_decay_to_asymptote(beta in 0.0f64..0.95, c in 0.0f64..3.0, e0_extra in 0.1f64..100.0) {
        let asym = 2.0 * c / (1.0 - beta);
        let r = discrete_ms_bound(beta, c, asym + e0_extra).unwrap();
        let vals: Vec<f64> = (0..50).map(|k| r.at_step(k)).collect();
        prop_assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!((r.at_step(100_000) - r.asymptotic_bound).abs() <= 1e-12 * r.asymptotic_bound.max(1.0));

        let d = discrete_distance_bound(beta, c, 10.0 + e0_extra).unwrap();
        prop_assert!((0..50).map(|k| d.at_step(k)).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn hybrid_trajectories_decay(beta in 0.0f64..0.9, lambda in -0.3f64..2.0, tau in 0.05f64..1.0, e0 in 50.0f64..500.0) {
        let r = hybrid_bound(beta, lambda, 0.5, 0.5, tau, e0).unwrap();
        prop_assume!(r.is_bounded());
        // Sampled once per dwell at the post-reset instant.
        let vals: Vec<f64> = (0..60).map(|k| r.at_time(k as f64 * tau, Side::Right)).collect();
        prop_assert!(vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        let far = r.at_time(1e4 * tau, Side::Right);
        prop_assert!((far - r.asymptotic_bound).abs() <= 1e-12 * r.asymptotic_bound.max(1.0));
    }

    #[test]
    fn noise_free_halves(beta in 0.0f64..0.9, lambda in -0.2f64..2.0, tau in 0.05f64..1.0, cd in 0.01f64..3.0, cc in 0.01f64..3.0) {
        let r = hybrid_bound(beta, lambda, cd, cc, tau, 0.0).unwrap();
        prop_assume!(r.is_bounded());
        let nf = apply_noisefree_corollary(&r).unwrap();
        prop_assert!(nf.asymptotic_bound < r.asymptotic_bound);
        prop_assert!((nf.asymptotic_bound - 0.5 * r.asymptotic_bound).abs() <= 1e-12 * r.asymptotic_bound);
    }
}
