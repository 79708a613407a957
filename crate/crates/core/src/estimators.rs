//! Backward regression targets `Ŷ_i` built from the step-`(i+1)` value model.
//!
//! With `L = L_i(X_i, μ_i(X_i))`, correction `D`, sampling noise `W` and the
//! Taylor triple `(Ȳ, Z̄, M̄)` taken at `X̄ = X_i + K_i`:
//!
//! | kind                | `Ŷ_i`                                                        |
//! |---------------------|--------------------------------------------------------------|
//! | `TaylorNoiseless`   | `L + Ȳ + Z̄ᵀD + ½tr(M̄(I + DDᵀ))`                              |
//! | `TaylorReestimate`  | `Ṽ(X_{i+1}) + L − Z̄ᵀW + Z̄ᵀD + ½tr(M̄(I + DDᵀ − WWᵀ))`         |
//! | `EmNoiseless`       | `Ṽ(X_{i+1}) + L + Z̃ᵀD`                                       |
//! | `EmNoisy`           | `Ṽ(X_{i+1}) + L − Z̃ᵀW + Z̃ᵀD`                                 |
//!
//! where `Z̃ = Σᵀ∂ₓṼ(X_{i+1})` is the gradient at the realized next state.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{DiscreteProblem, Policy};
use crate::sampling::TrajectoryBatch;
use crate::value_model::ValueModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    TaylorNoiseless,
    TaylorReestimate,
    EmNoiseless,
    EmNoisy,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::TaylorNoiseless,
        EstimatorKind::TaylorReestimate,
        EstimatorKind::EmNoiseless,
        EstimatorKind::EmNoisy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::TaylorNoiseless => "taylor_noiseless",
            EstimatorKind::TaylorReestimate => "taylor_reestimate",
            EstimatorKind::EmNoiseless => "em_noiseless",
            EstimatorKind::EmNoisy => "em_noisy",
        }
    }

    pub fn is_taylor(self) -> bool {
        matches!(self, EstimatorKind::TaylorNoiseless | EstimatorKind::TaylorReestimate)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown estimator `{s}`")))
    }
}

/// Value, diffusion-scaled gradient and diffusion-scaled Hessian of the next
/// step model at the pre-noise mean state `xbar`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaylorTriple {
    pub ybar: f64,
    pub zbar: DVector<f64>,
    pub mbar: DMatrix<f64>,
    pub xbar: DVector<f64>,
}

/// Taylor triple of `Ṽ_{i+1}` around `x_i + k_i`.
pub fn taylor_triple(
    m: &ValueModel,
    i: usize,
    x_i: &DVector<f64>,
    k_i: &DVector<f64>,
    sigma_i: &DMatrix<f64>,
) -> Result<TaylorTriple> {
    let xbar = x_i + k_i;
    let jet = m.jet(i + 1, &xbar)?;
    let zbar = sigma_i.tr_mul(&jet.grad);
    let mut mbar = sigma_i.tr_mul(&(&jet.hess * sigma_i));
    symmetrize(&mut mbar);
    Ok(TaylorTriple {
        ybar: jet.value,
        zbar,
        mbar,
        xbar,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for p in 0..n {
        for q in (p + 1)..n {
            let avg = 0.5 * (m[(p, q)] + m[(q, p)]);
            m[(p, q)] = avg;
            m[(q, p)] = avg;
        }
    }
}

/// `tr(M aaᵀ) = aᵀMa`, summed elementwise.
pub(crate) fn trace_outer(m: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for p in 0..n {
        for q in 0..n {
            acc += m[(p, q)] * a[p] * a[q];
        }
    }
    acc
}

fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

/// Everything one backward target needs from a single transition.
#[derive(Clone, Debug)]
pub struct Transition {
    pub x: DVector<f64>,
    pub drift: DVector<f64>,
    pub noise: DVector<f64>,
    pub correction: DVector<f64>,
    pub next: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub stage_cost: f64,
}

impl Transition {
    /// Transition of path `k` from step `i` to `i + 1`.
    pub fn from_batch(
        dp: &DiscreteProblem,
        mu: &dyn Policy,
        batch: &TrajectoryBatch,
        i: usize,
        k: usize,
    ) -> Self {
        let x = batch.state(k, i);
        let u = mu.control(i, &x);
        Self {
            stage_cost: dp.running_cost(i, &x, &u),
            sigma: dp.diffusion(i, &x),
            drift: batch.drift(k, i),
            noise: batch.noise(k, i),
            correction: batch.correction(k, i),
            next: batch.state(k, i + 1),
            x,
        }
    }
}

/// `Ŷ_i` for one transition.
pub fn target(kind: EstimatorKind, m: &ValueModel, i: usize, t: &Transition) -> Result<f64> {
    let l = t.stage_cost;
    let d = &t.correction;
    let w = &t.noise;
    let y = match kind {
        EstimatorKind::TaylorNoiseless => {
            let tt = taylor_triple(m, i, &t.x, &t.drift, &t.sigma)?;
            l + tt.ybar + tt.zbar.dot(d) + 0.5 * (trace(&tt.mbar) + trace_outer(&tt.mbar, d))
        }
        EstimatorKind::TaylorReestimate => {
            let tt = taylor_triple(m, i, &t.x, &t.drift, &t.sigma)?;
            let v_next = m.eval(i + 1, &t.next)?;
            v_next + l - tt.zbar.dot(w)
                + tt.zbar.dot(d)
                + 0.5 * (trace(&tt.mbar) + trace_outer(&tt.mbar, d) - trace_outer(&tt.mbar, w))
        }
        EstimatorKind::EmNoiseless | EstimatorKind::EmNoisy => {
            let jet = m.jet(i + 1, &t.next)?;
            let ztilde = t.sigma.tr_mul(&jet.grad);
            let noise_term = if kind == EstimatorKind::EmNoisy {
                ztilde.dot(w)
            } else {
                0.0
            };
            jet.value + l - noise_term + ztilde.dot(d)
        }
    };
    Ok(y)
}

/// Drifted Taylor backward difference
/// `ΔŶ = −L + Z̄ᵀW − Z̄ᵀD + ½tr(M̄(WWᵀ − I − DDᵀ))`.
pub fn delta_y(m: &ValueModel, i: usize, t: &Transition) -> Result<f64> {
    let tt = taylor_triple(m, i, &t.x, &t.drift, &t.sigma)?;
    let d = &t.correction;
    let w = &t.noise;
    Ok(-t.stage_cost + tt.zbar.dot(w) - tt.zbar.dot(d)
        + 0.5 * (trace_outer(&tt.mbar, w) - trace(&tt.mbar) - trace_outer(&tt.mbar, d)))
}

/// On-policy form `ΔŶ = −L + Z̄ᵀW + ½tr(M̄(WWᵀ − I))`, with the triple taken
/// at `x + drift`.
pub fn delta_y_on_policy(m: &ValueModel, i: usize, t: &Transition) -> Result<f64> {
    let tt = taylor_triple(m, i, &t.x, &t.drift, &t.sigma)?;
    let w = &t.noise;
    Ok(-t.stage_cost + tt.zbar.dot(w) + 0.5 * (trace_outer(&tt.mbar, w) - trace(&tt.mbar)))
}

pub fn delta_y_taylor(
    m: &ValueModel,
    dp: &DiscreteProblem,
    mu: &dyn Policy,
    batch: &TrajectoryBatch,
    i: usize,
    k: usize,
) -> Result<f64> {
    check_step(dp, batch, i)?;
    if k >= batch.samples() {
        return Err(Error::invalid(format!("trajectory {k} out of range")));
    }
    delta_y(m, i, &Transition::from_batch(dp, mu, batch, i, k))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackwardTargets {
    pub step: usize,
    pub kind: EstimatorKind,
    pub values: Vec<f64>,
}

fn check_step(dp: &DiscreteProblem, batch: &TrajectoryBatch, i: usize) -> Result<()> {
    if batch.steps() != dp.steps() {
        return Err(Error::invalid(format!(
            "batch has {} steps but problem has {}",
            batch.steps(),
            dp.steps()
        )));
    }
    if i >= dp.steps() {
        return Err(Error::invalid(format!(
            "backward targets need step < {}, got {i}",
            dp.steps()
        )));
    }
    Ok(())
}

pub fn estimate_targets(
    kind: EstimatorKind,
    m: &ValueModel,
    dp: &DiscreteProblem,
    mu: &dyn Policy,
    batch: &TrajectoryBatch,
    i: usize,
) -> Result<BackwardTargets> {
    check_step(dp, batch, i)?;
    m.fit(i + 1)?;
    let values: Vec<f64> = (0..batch.samples())
        .into_par_iter()
        .map(|k| target(kind, m, i, &Transition::from_batch(dp, mu, batch, i, k)))
        .collect::<Result<_>>()?;
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{kind} target for trajectory {k} at step {i}"
        )));
    }
    Ok(BackwardTargets {
        step: i,
        kind,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value_model::{BasisSpec, ScalingBox};
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    /// 1-D model with `Ṽ_1(x) = x²`.
    fn square_model() -> ValueModel {
        let mut m = ValueModel::new(BasisSpec::new(1, 2).unwrap(), 1);
        m.set_fit(1, ScalingBox::identity(1), v(&[0.5, 0.0, 0.5]), 3).unwrap();
        m
    }

    fn transition(x: f64, k: f64, sigma: f64, d: f64, w: f64, l: f64) -> Transition {
        Transition {
            x: v(&[x]),
            drift: v(&[k]),
            noise: v(&[w]),
            correction: v(&[d]),
            next: v(&[x + k + sigma * w]),
            sigma: DMatrix::from_element(1, 1, sigma),
            stage_cost: l,
        }
    }

    #[test]
    fn triple_of_square() {
        let m = square_model();
        let tt = taylor_triple(&m, 0, &v(&[1.0]), &v(&[1.0]), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(tt.xbar[0], 2.0);
        assert_relative_eq!(tt.ybar, 4.0, max_relative = 1e-14);
        assert_relative_eq!(tt.zbar[0], 4.0, max_relative = 1e-14);
        assert_relative_eq!(tt.mbar[(0, 0)], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn triple_of_constant() {
        let mut m = ValueModel::new(BasisSpec::new(2, 2).unwrap(), 1);
        let mut a = DVector::zeros(6);
        a[0] = 3.0;
        m.set_fit(1, ScalingBox::identity(2), a, 6).unwrap();
        let tt = taylor_triple(&m, 0, &v(&[1.0, 2.0]), &v(&[0.1, 0.0]), &DMatrix::identity(2, 2))
            .unwrap();
        assert_eq!(tt.zbar.norm(), 0.0);
        assert_eq!(tt.mbar.norm(), 0.0);
    }

    #[test]
    fn triple_requires_fit() {
        let m = ValueModel::new(BasisSpec::new(1, 2).unwrap(), 2);
        assert!(matches!(
            taylor_triple(&m, 0, &v(&[0.0]), &v(&[0.0]), &DMatrix::identity(1, 1)),
            Err(Error::NotFitted { step: 1 })
        ));
    }

    #[test]
    fn noiseless_hand_case() {
        let m = square_model();
        for w in [-2.0, 0.0, 0.3, 5.0] {
            let t = transition(1.0, 1.0, 1.0, 0.5, w, 0.2);
            let y = target(EstimatorKind::TaylorNoiseless, &m, 0, &t).unwrap();
            assert_relative_eq!(y, 7.45, max_relative = 1e-14);
        }
    }

    #[test]
    fn noiseless_without_drift() {
        let m = square_model();
        let t = transition(0.5, 0.7, 0.4, 0.0, 1.3, 0.1);
        let tt = taylor_triple(&m, 0, &t.x, &t.drift, &t.sigma).unwrap();
        let y = target(EstimatorKind::TaylorNoiseless, &m, 0, &t).unwrap();
        assert_relative_eq!(y, 0.1 + tt.ybar + 0.5 * tt.mbar[(0, 0)], max_relative = 1e-15);
    }

    #[test]
    fn reestimate_equals_noiseless_for_quadratic() {
        let m = square_model();
        for (d, w) in [(0.0, 1.0), (0.5, -0.7), (-1.2, 2.2)] {
            let t = transition(-0.3, 0.4, 0.9, d, w, 0.05);
            let a = target(EstimatorKind::TaylorNoiseless, &m, 0, &t).unwrap();
            let b = target(EstimatorKind::TaylorReestimate, &m, 0, &t).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
    }

    #[test]
    fn em_uses_gradient_at_realized_state() {
        let m = square_model();
        let t = transition(1.0, 1.0, 1.0, 0.5, 1.0, 0.2);
        // X_{i+1} = 3, Ṽ = 9, Z̃ = 6.
        let noiseless = target(EstimatorKind::EmNoiseless, &m, 0, &t).unwrap();
        assert_relative_eq!(noiseless, 9.0 + 0.2 + 6.0 * 0.5, max_relative = 1e-14);
        let noisy = target(EstimatorKind::EmNoisy, &m, 0, &t).unwrap();
        assert_relative_eq!(noisy, 9.0 + 0.2 - 6.0 + 3.0, max_relative = 1e-14);
    }

    #[test]
    fn delta_y_direct_formula() {
        // D = 0, W = 0, L = 0, M̄ = 2: ΔŶ = ½·2·(0 − 1) = −1.
        let m = square_model();
        let t = transition(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(delta_y(&m, 0, &t).unwrap(), -1.0, max_relative = 1e-14);
    }

    #[test]
    fn delta_y_reduces_to_on_policy_form() {
        let m = square_model();
        for w in [-1.5, 0.2, 3.0] {
            let t = transition(0.3, -0.1, 0.8, 0.0, w, 0.7);
            assert_eq!(delta_y(&m, 0, &t).unwrap(), delta_y_on_policy(&m, 0, &t).unwrap());
        }
    }

    #[test]
    fn reestimate_is_next_value_minus_delta() {
        let mut m = ValueModel::new(BasisSpec::new(1, 4).unwrap(), 1);
        m.set_fit(1, ScalingBox::identity(1), v(&[0.1, -0.3, 0.8, 0.2, 0.05]), 5).unwrap();
        let t = transition(0.2, 0.1, 0.6, 0.3, -0.8, 0.4);
        let y = target(EstimatorKind::TaylorReestimate, &m, 0, &t).unwrap();
        let rhs = m.eval(1, &t.next).unwrap() - delta_y(&m, 0, &t).unwrap();
        assert_relative_eq!(y, rhs, max_relative = 1e-13);
    }

    #[test]
    fn quadratic_mbar_matches_symbolic() {
        // Ṽ(x) = xᵀPx in 2-D, built from the Chebyshev identities
        // x² = (T₀ + T₂)/2 and xy = T₁(x)T₁(y).
        let p = DMatrix::from_row_slice(2, 2, &[1.3, -0.4, -0.4, 0.7]);
        let spec = BasisSpec::new(2, 2).unwrap();
        let mut alpha = DVector::zeros(spec.len());
        for (b, idx) in spec.indices().iter().enumerate() {
            alpha[b] = match idx.as_slice() {
                [0, 0] => 0.5 * (p[(0, 0)] + p[(1, 1)]),
                [2, 0] => 0.5 * p[(0, 0)],
                [0, 2] => 0.5 * p[(1, 1)],
                [1, 1] => 2.0 * p[(0, 1)],
                _ => 0.0,
            };
        }
        let mut m = ValueModel::new(spec, 1);
        m.set_fit(1, ScalingBox::identity(2), alpha, 6).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.5]);
        let x = v(&[0.4, -0.2]);
        let k = v(&[0.1, 0.3]);
        let tt = taylor_triple(&m, 0, &x, &k, &sigma).unwrap();
        let xbar = &x + &k;
        let oracle_m = sigma.transpose() * (&p * 2.0) * &sigma;
        let oracle_z = sigma.transpose() * (&p * 2.0) * &xbar;
        let oracle_y = (xbar.transpose() * &p * &xbar)[(0, 0)];
        assert!((&tt.mbar - oracle_m).amax() < 1e-12);
        assert!((&tt.zbar - oracle_z).amax() < 1e-12);
        assert!((tt.ybar - oracle_y).abs() < 1e-12);
        assert_eq!(tt.mbar[(0, 1)], tt.mbar[(1, 0)]);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("euler".parse::<EstimatorKind>().is_err());
    }
}
