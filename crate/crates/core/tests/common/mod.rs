#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use taylor_fbsde::oracles::RiccatiTruth;
use taylor_fbsde::problems::{
    discretize, ContinuousProblem, ControlBox, DiscreteProblem, LinearQuadratic,
};
use taylor_fbsde::value_model::{BasisSpec, ScalingBox, ValueModel};

pub fn m1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

/// `dX = (aX + bu)dt + σdW`, `ℓ = qx² + ru²`, `g = gx²`, `X_0 = x0`.
#[allow(clippy::too_many_arguments)]
pub fn scalar_lqr(a: f64, b: f64, q: f64, r: f64, g: f64, sigma: f64, x0: f64, horizon: f64, steps: usize) -> DiscreteProblem {
    let lq = LinearQuadratic {
        a: m1(a),
        b: m1(b),
        q: m1(q),
        r: m1(r),
        g: m1(g),
        sigma: m1(sigma),
    };
    let cp = ContinuousProblem::linear_quadratic(
        "scalar_lqr",
        lq,
        DVector::from_element(1, x0),
        horizon,
        ControlBox::unbounded(1),
    )
    .unwrap();
    discretize(&cp, steps).unwrap()
}

pub fn default_scalar_lqr() -> DiscreteProblem {
    scalar_lqr(-0.5, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0, 20)
}

/// Chebyshev coefficients (identity scaling) of `xᵀPx + c`.
pub fn quadratic_coeffs(spec: &BasisSpec, p: &DMatrix<f64>, c: f64) -> DVector<f64> {
    assert!(spec.degree() >= 2);
    let mut out = DVector::zeros(spec.len());
    for (k, alpha) in spec.indices().iter().enumerate() {
        let total: usize = alpha.iter().sum();
        let nz: Vec<usize> = (0..alpha.len()).filter(|&j| alpha[j] > 0).collect();
        out[k] = match (total, nz.as_slice()) {
            // x_j² = (T₀ + T₂(x_j))/2.
            (0, _) => c + 0.5 * p.trace(),
            (2, [j]) => 0.5 * p[(*j, *j)],
            (2, [j, l]) => p[(*j, *l)] + p[(*l, *j)],
            _ => 0.0,
        };
    }
    out
}

/// The exact value model `Ṽ_i = V_i` of an LQR problem.
pub fn riccati_model(truth: &RiccatiTruth, degree: usize) -> ValueModel {
    let n = truth.p[0].nrows();
    let spec = BasisSpec::new(n, degree).unwrap();
    let mut m = ValueModel::new(spec.clone(), truth.steps());
    for i in 0..=truth.steps() {
        let coeffs = quadratic_coeffs(&spec, &truth.p[i], truth.c[i]);
        m.set_fit(i, ScalingBox::identity(n), coeffs, spec.len()).unwrap();
    }
    m
}

/// Same 1-D coefficients at every step.
pub fn model_1d(steps: usize, coeffs: &[f64]) -> ValueModel {
    let spec = BasisSpec::new(1, coeffs.len() - 1).unwrap();
    let mut m = ValueModel::new(spec, steps);
    for i in 0..=steps {
        m.set_fit(i, ScalingBox::identity(1), DVector::from_column_slice(coeffs), coeffs.len())
            .unwrap();
    }
    m
}
