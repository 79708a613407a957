//! Gauss–Hermite rules for expectations under the standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes `z_q` and weights `w_q` with `Σ_q w_q h(z_q) ≈ E[h(Z)]`, `Z ~ N(0,1)`.
///
/// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
/// polynomials; exact for polynomials of degree below `2n`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("Gauss-Hermite rule needs at least one node"));
        }
        let mut jacobi = DMatrix::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            jacobi[(k, k - 1)] = b;
            jacobi[(k - 1, k)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|q| {
                let v0 = eig.eigenvectors[(0, q)];
                (eig.eigenvalues[q], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Symmetrize to remove eigen-solver noise.
        for q in 0..n / 2 {
            let (zl, wl) = pairs[q];
            let (zr, wr) = pairs[n - 1 - q];
            let z = 0.5 * (zr - zl);
            let w = 0.5 * (wl + wr);
            pairs[q] = (-z, w);
            pairs[n - 1 - q] = (z, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, h: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * h(z))
            .sum()
    }

    /// Tensor-product rule in `dim` dimensions as (node vector, weight) pairs.
    pub fn tensor(&self, dim: usize) -> Vec<(Vec<f64>, f64)> {
        let n = self.len();
        let total = n.pow(dim as u32);
        (0..total)
            .map(|mut flat| {
                let mut z = Vec::with_capacity(dim);
                let mut w = 1.0;
                for _ in 0..dim {
                    let q = flat % n;
                    flat /= n;
                    z.push(self.nodes[q]);
                    w *= self.weights[q];
                }
                (z, w)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(f64::from).product()
    }

    #[test]
    fn gaussian_moments_are_exact() {
        let gh = GaussHermite::new(11).unwrap();
        for p in 0..22u32 {
            let got = gh.expect(|z| z.powi(p as i32));
            let want = if p % 2 == 1 { 0.0 } else { double_factorial(p.saturating_sub(1)) };
            let scale = double_factorial(p).max(1.0);
            assert!((got - want).abs() <= 1e-12 * scale, "moment {p}: {got} vs {want}");
        }
    }

    #[test]
    fn small_rules_match_tables() {
        let gh = GaussHermite::new(2).unwrap();
        assert!((gh.nodes[1] - 1.0).abs() < 1e-14);
        assert!((gh.weights[0] - 0.5).abs() < 1e-14);
        let gh = GaussHermite::new(3).unwrap();
        assert!((gh.nodes[2] - 3f64.sqrt()).abs() < 1e-13);
        assert!((gh.weights[1] - 2.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn smooth_expectation() {
        // E[cos Z] = e^{-1/2}.
        let gh = GaussHermite::new(21).unwrap();
        assert!((gh.expect(f64::cos) - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn tensor_weights_sum_to_one() {
        let t = GaussHermite::new(5).unwrap().tensor(2);
        assert_eq!(t.len(), 25);
        let s: f64 = t.iter().map(|p| p.1).sum();
        assert!((s - 1.0).abs() < 1e-14);
        let m2: f64 = t.iter().map(|(z, w)| w * z[0] * z[1]).sum();
        assert!(m2.abs() < 1e-14);
    }
}
