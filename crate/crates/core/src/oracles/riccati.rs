//! Exact value function of a discrete-time LQR problem with additive noise.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problems::{quad_form, DiscreteLinearQuadratic, DiscreteProblem, LinearFeedback};

/// `V_i(x) = xᵀP_i x + c_i`, optimal control `u = −gain_i x`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiTruth {
    pub p: Vec<DMatrix<f64>>,
    pub c: Vec<f64>,
    /// `gain_i` for `i = 0..N−1`.
    pub gains: Vec<DMatrix<f64>>,
}

impl RiccatiTruth {
    pub fn steps(&self) -> usize {
        self.gains.len()
    }

    pub fn value(&self, i: usize, x: &DVector<f64>) -> f64 {
        quad_form(&self.p[i], x) + self.c[i]
    }

    pub fn control(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        -(&self.gains[i] * x)
    }

    pub fn policy(&self) -> LinearFeedback {
        LinearFeedback {
            gains: self.gains.clone(),
        }
    }

    /// JSON array of `{step, p, c, gain}` with `p` and `gain` flattened
    /// row-major; `gain` is null at the horizon.
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Entry {
            step: usize,
            p: Vec<f64>,
            c: f64,
            gain: Option<Vec<f64>>,
        }
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        let entries: Vec<Entry> = (0..self.p.len())
            .map(|i| Entry {
                step: i,
                p: row_major(&self.p[i]),
                c: self.c[i],
                gain: self.gains.get(i).map(row_major),
            })
            .collect();
        serde_json::to_writer_pretty(out, &entries)?;
        Ok(())
    }
}

/// Backward Riccati recursion over `steps` intervals.
///
/// `a`, `b`, `q`, `r` are the per-step matrices (`A_d = I + A·dt`,
/// `B_d = B·dt`, `Q·dt`, `R·dt`), `g` the terminal weight and `sigma` the
/// per-step diffusion `σ√dt`.
pub fn riccati_value(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    g: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    steps: usize,
) -> Result<RiccatiTruth> {
    let n = a.nrows();
    let m = b.ncols();
    if a.shape() != (n, n)
        || b.nrows() != n
        || q.shape() != (n, n)
        || r.shape() != (m, m)
        || g.shape() != (n, n)
        || sigma.nrows() != n
    {
        return Err(Error::invalid("Riccati matrices have inconsistent shapes"));
    }
    let mut p = vec![DMatrix::zeros(n, n); steps + 1];
    let mut c = vec![0.0; steps + 1];
    let mut gains = vec![DMatrix::zeros(m, n); steps];
    p[steps] = g.clone();
    for i in (0..steps).rev() {
        let next = &p[i + 1];
        let s = r + b.transpose() * next * b;
        let rhs = b.transpose() * next * a;
        let gain = s
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .or_else(|| s.lu().solve(&rhs))
            .ok_or(Error::SingularRecursion { step: i })?;
        let mut pi = q + a.transpose() * next * (a - b * &gain);
        let sym = 0.5 * (&pi + pi.transpose());
        pi = sym;
        c[i] = c[i + 1] + (sigma.transpose() * next * sigma).trace();
        p[i] = pi;
        gains[i] = gain;
    }
    Ok(RiccatiTruth { p, c, gains })
}

pub fn riccati_discrete(lq: &DiscreteLinearQuadratic, steps: usize) -> Result<RiccatiTruth> {
    riccati_value(&lq.a, &lq.b, &lq.q, &lq.r, &lq.g, &lq.sigma, steps)
}

/// Riccati solution of a linear-quadratic problem.
pub fn riccati_for(dp: &DiscreteProblem) -> Result<RiccatiTruth> {
    let lq = dp
        .linear_quadratic()
        .ok_or_else(|| Error::invalid(format!("problem `{}` is not linear-quadratic", dp.continuous().name)))?;
    riccati_discrete(&lq, dp.steps())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn scalar_one_step_by_hand() {
        let t = riccati_value(&s(1.0), &s(1.0), &s(0.0), &s(1.0), &s(1.0), &s(1.0), 1).unwrap();
        assert!((t.gains[0][(0, 0)] - 0.5).abs() < 1e-15);
        assert!((t.p[0][(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(t.c[0], 1.0);
        assert_eq!(t.c[1], 0.0);
        assert_eq!(t.value(0, &DVector::zeros(1)), 1.0);
    }

    #[test]
    fn uncontrolled_propagation() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.2, 0.9]);
        let b = DMatrix::zeros(2, 1);
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let t = riccati_value(&a, &b, &DMatrix::zeros(2, 2), &s(1.0), &g, &DMatrix::zeros(2, 2), 3)
            .unwrap();
        let mut want = g.clone();
        for i in (0..3).rev() {
            want = a.transpose() * want * &a;
            assert!((&t.p[i] - &want).amax() < 1e-13);
            assert_eq!(t.c[i], 0.0);
        }
    }

    #[test]
    fn singular_gain_system() {
        let err = riccati_value(&s(1.0), &s(1.0), &s(0.0), &s(0.0), &s(0.0), &s(0.0), 2).unwrap_err();
        assert!(matches!(err, Error::SingularRecursion { step: 1 }));
    }

    #[test]
    fn json_export_shape() {
        let t = riccati_value(&s(1.0), &s(1.0), &s(0.0), &s(1.0), &s(1.0), &s(1.0), 2).unwrap();
        let mut buf = Vec::new();
        t.write_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 3);
        assert!(v[2]["gain"].is_null());
        assert_eq!(v[0]["p"].as_array().unwrap().len(), 1);
    }
}
