mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use taylor_fbsde::metrics::confidence_region;
use taylor_fbsde::oracles::{grid_bellman, riccati_for, Axis, GaussHermite, GridPolicy, GridSpec};
use taylor_fbsde::problems::{build_cartpole_lqr, discretize, ControlBox, LqrParams, Policy};
use taylor_fbsde::sampling::{sample_forward, DriftProcess};

use common::default_scalar_lqr;

#[test]
fn riccati_constants_nonincreasing_and_p_psd() {
    let dp = discretize(&build_cartpole_lqr(&LqrParams::default()).unwrap(), 100).unwrap();
    let t = riccati_for(&dp).unwrap();
    for i in 0..t.steps() {
        assert!(t.c[i] >= t.c[i + 1]);
        let eig = t.p[i].clone().symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10 * eig.max(), "P_{i} not PSD: {eig}");
        assert_eq!(t.p[i], t.p[i].transpose());
    }
    assert_eq!(t.c[t.steps()], 0.0);
}

#[test]
fn riccati_bellman_residual_vanishes() {
    // V_i(x) = min_u ℓ_i + E V_{i+1}: check by brute force over u for the
    // scalar problem at a few states.
    let dp = default_scalar_lqr();
    let t = riccati_for(&dp).unwrap();
    let lq = dp.linear_quadratic().unwrap();
    let (a, b, q, r, s) = (lq.a[(0, 0)], lq.b[(0, 0)], lq.q[(0, 0)], lq.r[(0, 0)], lq.sigma[(0, 0)]);
    for i in [0, 7, 19] {
        let p = t.p[i + 1][(0, 0)];
        for x in [-2.0, -0.3, 0.0, 1.1] {
            let cost = |u: f64| q * x * x + r * u * u + p * ((a * x + b * u).powi(2) + s * s) + t.c[i + 1];
            let mut best = f64::INFINITY;
            let mut k = -5.0;
            while k <= 5.0 {
                best = best.min(cost(k));
                k += 1e-5;
            }
            let v = t.value(i, &DVector::from_element(1, x));
            assert!((best - v).abs() < 1e-8, "step {i}, x {x}: {best} vs {v}");
        }
    }
}

#[test]
fn gauss_hermite_matches_lognormal_mean() {
    let gh = GaussHermite::new(31).unwrap();
    for a in [0.1f64, 0.5, 1.0, 2.0] {
        let want = (0.5 * a * a).exp();
        assert!((gh.expect(|z| (a * z).exp()) - want).abs() < 1e-10 * want);
    }
}

fn scalar_grid_error(nodes: usize) -> f64 {
    let dp = default_scalar_lqr();
    let truth = riccati_for(&dp).unwrap();
    let reference = sample_forward(&dp, &truth.policy(), &DriftProcess::OnPolicy, 2048, 3).unwrap();
    let region = confidence_region(&reference);
    let (lo, hi) = region.hull();
    let mut spec = GridSpec::covering(&lo, &hi, 0.5, nodes).unwrap();
    spec.control_range = Some(ControlBox::symmetric(1, 20.0).unwrap());
    let grid = grid_bellman(&dp, &spec).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..=dp.steps() {
        for x in region.points(i) {
            worst = worst.max((grid.value(i, &x).unwrap() - truth.value(i, &x)).abs());
        }
    }
    worst
}

#[test]
fn grid_converges_to_riccati() {
    let coarse = scalar_grid_error(101);
    let fine = scalar_grid_error(401);
    assert!(fine < coarse / 4.0, "{coarse} -> {fine}");
    assert!(fine < 1e-3);
}

#[test]
fn grid_policy_tracks_riccati_gain() {
    let dp = default_scalar_lqr();
    let truth = riccati_for(&dp).unwrap();
    let mut spec = GridSpec::new(vec![Axis::new(-4.0, 4.0, 801).unwrap()]);
    spec.control_range = Some(ControlBox::symmetric(1, 20.0).unwrap());
    let grid = std::sync::Arc::new(grid_bellman(&dp, &spec).unwrap());
    let policy = GridPolicy { truth: grid };
    for i in [0, 10, 19] {
        for x in [-1.5, -0.5, 0.25, 1.0, 2.0] {
            let x = DVector::from_element(1, x);
            let u = policy.control(i, &x)[0];
            let want = truth.control(i, &x)[0];
            assert!((u - want).abs() < 1e-2, "step {i}: {u} vs {want}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gauss_hermite_weights_form_a_distribution(n in 1usize..40) {
        let gh = GaussHermite::new(n).unwrap();
        prop_assert_eq!(gh.len(), n);
        prop_assert!(gh.weights.iter().all(|&w| w > 0.0));
        prop_assert!((gh.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        prop_assert!(gh.nodes.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(gh.expect(|z| z).abs() < 1e-12);
    }

    #[test]
    fn riccati_value_is_nonnegative(x in prop::collection::vec(-3.0f64..3.0, 4), i in 0usize..=100) {
        let dp = discretize(&build_cartpole_lqr(&LqrParams::default()).unwrap(), 100).unwrap();
        let t = riccati_for(&dp).unwrap();
        prop_assert!(t.value(i, &DVector::from_vec(x)) >= 0.0);
    }
}
