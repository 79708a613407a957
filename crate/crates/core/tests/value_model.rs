use nalgebra::DVector;
use proptest::prelude::*;
use taylor_fbsde::value_model::{lsmc_fit, BasisSpec, ScalingBox, ValueModel};

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, j| acc * (n - j) / (j + 1))
}

#[test]
fn basis_size_is_total_degree_count() {
    for dim in 1..=4 {
        for degree in 0..=6 {
            assert_eq!(BasisSpec::new(dim, degree).unwrap().len(), binomial(dim + degree, dim));
        }
    }
    assert_eq!(BasisSpec::new(4, 2).unwrap().len(), 15);
}

#[test]
fn lsmc_recovers_polynomial_in_span() {
    // y = 1 + 2x₁ − x₁x₂ + 0.5x₂³ lies in the cubic span.
    let spec = BasisSpec::new(2, 3).unwrap();
    let f = |x: &DVector<f64>| 1.0 + 2.0 * x[0] - x[0] * x[1] + 0.5 * x[1].powi(3);
    let xs: Vec<DVector<f64>> = (0..200)
        .map(|k| {
            let t = k as f64;
            DVector::from_column_slice(&[3.0 + 2.0 * (0.37 * t).sin(), -1.0 + (1.13 * t).cos()])
        })
        .collect();
    let ys: Vec<f64> = xs.iter().map(f).collect();
    let scaling = ScalingBox::from_states(&xs, 1e-3).unwrap();
    let fit = lsmc_fit(&xs, &ys, &spec, &scaling, 0.0).unwrap();
    assert!(!fit.rank_deficient);
    let mut m = ValueModel::new(spec.clone(), 0);
    m.set_fit(0, scaling, fit.coeffs, fit.rank).unwrap();
    for x in [DVector::from_column_slice(&[2.5, -0.5]), DVector::from_column_slice(&[4.0, 0.2])] {
        assert!((m.eval(0, &x).unwrap() - f(&x)).abs() < 1e-9);
    }
}

fn model(dim: usize, degree: usize, coeffs: &[f64], center: &[f64], half: &[f64]) -> ValueModel {
    let spec = BasisSpec::new(dim, degree).unwrap();
    let n = spec.len();
    let mut m = ValueModel::new(spec, 0);
    let scaling = ScalingBox::new(center.to_vec(), half.to_vec()).unwrap();
    m.set_fit(0, scaling, DVector::from_column_slice(&coeffs[..n]), n).unwrap();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jet_matches_finite_differences(
        dim in 1usize..=3,
        degree in 1usize..=5,
        coeffs in prop::collection::vec(-1.0f64..1.0, 56),
        center in prop::collection::vec(-3.0f64..3.0, 3),
        half in prop::collection::vec(0.3f64..3.0, 3),
        u in prop::collection::vec(-1.1f64..1.1, 3),
    ) {
        let m = model(dim, degree, &coeffs, &center[..dim], &half[..dim]);
        let x = DVector::from_fn(dim, |j, _| center[j] + half[j] * u[j]);
        let jet = m.jet(0, &x).unwrap();
        prop_assert!((jet.value - m.eval(0, &x).unwrap()).abs() < 1e-12 * (1.0 + jet.value.abs()));
        let gscale = jet.grad.amax().max(1e-8);
        let hscale = jet.hess.amax().max(1e-8);
        for j in 0..dim {
            let h = 1e-5 * half[j];
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (m.eval(0, &xp).unwrap() - m.eval(0, &xm).unwrap()) / (2.0 * h);
            prop_assert!((fd - jet.grad[j]).abs() < 1e-6 * gscale);
            let h = 1e-4 * half[j];
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (m.grad(0, &xp).unwrap() - m.grad(0, &xm).unwrap()) / (2.0 * h);
            for r in 0..dim {
                prop_assert!((col[r] - jet.hess[(r, j)]).abs() < 1e-4 * hscale);
            }
        }
        prop_assert!((&jet.hess - jet.hess.transpose()).amax() <= 1e-12 * hscale);
    }

    #[test]
    fn fit_is_invariant_to_affine_rescaling_of_targets(
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
        seed in 0u64..100,
    ) {
        let spec = BasisSpec::new(1, 3).unwrap();
        let xs: Vec<DVector<f64>> = (0..40).map(|k| DVector::from_element(1, ((k as u64 * 7919 + seed) % 97) as f64 / 10.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] * 0.7).sin()).collect();
        let scaling = ScalingBox::from_states(&xs, 1e-3).unwrap();
        let base = lsmc_fit(&xs, &ys, &spec, &scaling, 0.0).unwrap();
        let ys2: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
        let fit = lsmc_fit(&xs, &ys2, &spec, &scaling, 0.0).unwrap();
        let mut expected = base.coeffs * a;
        expected[0] += b;
        prop_assert!((fit.coeffs - expected).amax() < 1e-8 * (a + b.abs()));
    }
}
