//! Linear-in-parameters value functions over total-degree Chebyshev bases.
//!
//! A feature is a product `T_{a₁}(z₁)·…·T_{aₙ}(zₙ)` over a multi-index with
//! `Σaⱼ ≤ d`, where `z = (x − c)/h` rescales each coordinate by a per-step
//! [`ScalingBox`]. Gradients and Hessians come from the Chebyshev derivative
//! recurrences, with one factor `1/hⱼ` per derivative order.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total-degree multivariate Chebyshev basis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasisSpec {
    dim: usize,
    degree: usize,
    indices: Vec<Vec<usize>>,
}

impl BasisSpec {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("basis dimension must be positive"));
        }
        let mut indices = Vec::new();
        for total in 0..=degree {
            let mut current = vec![0; dim];
            push_compositions(total, 0, &mut current, &mut indices);
        }
        Ok(Self {
            dim,
            degree,
            indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// Feature vector `Φ(x)`.
    pub fn features(&self, scaling: &ScalingBox, x: &[f64]) -> Vec<f64> {
        let tables = self.tables(scaling, x, 0);
        self.indices
            .iter()
            .map(|a| a.iter().enumerate().map(|(j, &aj)| tables[j].t[aj]).product())
            .collect()
    }

    /// Value, gradient and Hessian of `Φ(x)ᵀα` in physical coordinates.
    pub fn jet(&self, scaling: &ScalingBox, x: &[f64], alpha: &DVector<f64>) -> Jet {
        let n = self.dim;
        let tables = self.tables(scaling, x, 2);
        let mut value = 0.0;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for (a, &c) in self.indices.iter().zip(alpha.iter()) {
            if c == 0.0 {
                continue;
            }
            value += c * a.iter().enumerate().map(|(j, &aj)| tables[j].t[aj]).product::<f64>();
            for p in 0..n {
                if a[p] == 0 {
                    continue;
                }
                let rest: f64 = (0..n).filter(|&j| j != p).map(|j| tables[j].t[a[j]]).product();
                grad[p] += c * tables[p].dt[a[p]] * rest / scaling.half_width[p];
                hess[(p, p)] += c * tables[p].ddt[a[p]] * rest
                    / (scaling.half_width[p] * scaling.half_width[p]);
                for q in (p + 1)..n {
                    if a[q] == 0 {
                        continue;
                    }
                    let rest: f64 = (0..n)
                        .filter(|&j| j != p && j != q)
                        .map(|j| tables[j].t[a[j]])
                        .product();
                    let v = c * tables[p].dt[a[p]] * tables[q].dt[a[q]] * rest
                        / (scaling.half_width[p] * scaling.half_width[q]);
                    hess[(p, q)] += v;
                    hess[(q, p)] += v;
                }
            }
        }
        Jet { value, grad, hess }
    }

    fn tables(&self, scaling: &ScalingBox, x: &[f64], order: usize) -> Vec<ChebyshevTable> {
        (0..self.dim)
            .map(|j| ChebyshevTable::new(scaling.scale(j, x[j]), self.degree, order))
            .collect()
    }
}

fn push_compositions(remaining: usize, pos: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        current[pos] = k;
        push_compositions(remaining - k, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// `T_k(z)` with first and second derivatives for `k = 0..=degree`.
struct ChebyshevTable {
    t: Vec<f64>,
    dt: Vec<f64>,
    ddt: Vec<f64>,
}

impl ChebyshevTable {
    fn new(z: f64, degree: usize, order: usize) -> Self {
        let len = degree + 1;
        let mut t = vec![0.0; len];
        let mut dt = vec![0.0; len];
        let mut ddt = vec![0.0; len];
        t[0] = 1.0;
        if len > 1 {
            t[1] = z;
            dt[1] = 1.0;
        }
        for k in 1..degree {
            t[k + 1] = 2.0 * z * t[k] - t[k - 1];
            if order >= 1 {
                dt[k + 1] = 2.0 * t[k] + 2.0 * z * dt[k] - dt[k - 1];
            }
            if order >= 2 {
                ddt[k + 1] = 4.0 * dt[k] + 2.0 * z * ddt[k] - ddt[k - 1];
            }
        }
        Self { t, dt, ddt }
    }
}

/// Per-coordinate affine map `z = (x − center)/half_width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingBox {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl ScalingBox {
    pub fn new(center: Vec<f64>, half_width: Vec<f64>) -> Result<Self> {
        if center.len() != half_width.len() {
            return Err(Error::invalid("scaling center and width differ in length"));
        }
        if half_width.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::invalid("scaling half-widths must be positive and finite"));
        }
        Ok(Self { center, half_width })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            half_width: vec![1.0; dim],
        }
    }

    /// `mean ± max(3·std, min_half_width)` per coordinate.
    pub fn from_states(states: &[DVector<f64>], min_half_width: f64) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::invalid("cannot build a scaling box from zero states"))?;
        let n = first.len();
        let mut center = Vec::with_capacity(n);
        let mut half_width = Vec::with_capacity(n);
        for j in 0..n {
            let (mean, std) = mean_std(states.iter().map(|x| x[j]));
            center.push(mean);
            half_width.push((3.0 * std).max(min_half_width));
        }
        Self::new(center, half_width)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn scale(&self, j: usize, x: f64) -> f64 {
        (x - self.center[j]) / self.half_width[j]
    }
}

/// Population mean and standard deviation.
pub(crate) fn mean_std<I: Iterator<Item = f64> + Clone>(values: I) -> (f64, f64) {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFit {
    pub scaling: ScalingBox,
    pub coeffs: Vec<f64>,
    pub rank: usize,
}

/// Per-timestep value approximations `Ṽ_i(x) = Φ_i(x)ᵀα_i`, `i = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueModel {
    basis: BasisSpec,
    fits: Vec<Option<StepFit>>,
}

impl ValueModel {
    pub fn new(basis: BasisSpec, steps: usize) -> Self {
        Self {
            basis,
            fits: vec![None; steps + 1],
        }
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn steps(&self) -> usize {
        self.fits.len() - 1
    }

    /// Polynomial degree at most two: the second-order Taylor expansion is exact.
    pub fn is_quadratic(&self) -> bool {
        self.basis.degree <= 2
    }

    pub fn set_fit(&mut self, step: usize, scaling: ScalingBox, coeffs: DVector<f64>, rank: usize) -> Result<()> {
        if step >= self.fits.len() {
            return Err(Error::invalid(format!("step {step} beyond model horizon")));
        }
        if coeffs.len() != self.basis.len() || scaling.dim() != self.basis.dim {
            return Err(Error::invalid("coefficients or scaling do not match the basis"));
        }
        self.fits[step] = Some(StepFit {
            scaling,
            coeffs: coeffs.as_slice().to_vec(),
            rank,
        });
        Ok(())
    }

    pub fn fit(&self, step: usize) -> Result<&StepFit> {
        self.fits
            .get(step)
            .and_then(|f| f.as_ref())
            .ok_or(Error::NotFitted { step })
    }

    pub fn fitted_steps(&self) -> Vec<usize> {
        (0..self.fits.len()).filter(|&i| self.fits[i].is_some()).collect()
    }

    pub fn eval(&self, step: usize, x: &DVector<f64>) -> Result<f64> {
        let fit = self.fit(step)?;
        let phi = self.basis.features(&fit.scaling, x.as_slice());
        Ok(phi.iter().zip(&fit.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn jet(&self, step: usize, x: &DVector<f64>) -> Result<Jet> {
        let fit = self.fit(step)?;
        let alpha = DVector::from_column_slice(&fit.coeffs);
        Ok(self.basis.jet(&fit.scaling, x.as_slice(), &alpha))
    }

    pub fn grad(&self, step: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.jet(step, x)?.grad)
    }

    pub fn hessian(&self, step: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.jet(step, x)?.hess)
    }

    /// Add `c` to every fitted step (the constant feature is `T₀…T₀ = 1`).
    pub fn add_constant(&mut self, c: f64) {
        for fit in self.fits.iter_mut().flatten() {
            fit.coeffs[0] += c;
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Entry<'a> {
            step: usize,
            degree: usize,
            scaling: &'a ScalingBox,
            coeffs: &'a [f64],
        }
        let entries: Vec<Entry<'_>> = self
            .fits
            .iter()
            .enumerate()
            .filter_map(|(step, f)| {
                f.as_ref().map(|f| Entry {
                    step,
                    degree: self.basis.degree,
                    scaling: &f.scaling,
                    coeffs: &f.coeffs,
                })
            })
            .collect();
        serde_json::to_writer_pretty(out, &entries)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsmcFit {
    pub coeffs: DVector<f64>,
    pub rank: usize,
    /// The design (with ridge rows) had fewer independent columns than
    /// features; `coeffs` is the minimum-norm solution.
    pub rank_deficient: bool,
}

/// Least squares `argmin_α Σ_k (y_k − Φ(x_k)ᵀα)² + ridge·‖α‖²`.
///
/// Householder QR of the (ridge-augmented) design reduces the problem to the
/// small triangular factor, which is then solved through its SVD so that
/// rank-deficient designs yield the minimum-norm solution.
pub fn lsmc_fit(
    xs: &[DVector<f64>],
    ys: &[f64],
    spec: &BasisSpec,
    scaling: &ScalingBox,
    ridge: f64,
) -> Result<LsmcFit> {
    let all: Vec<usize> = (0..spec.len()).collect();
    lsmc_fit_subset(xs, ys, spec, scaling, ridge, &all)
}

/// [`lsmc_fit`] restricted to the basis functions listed in `active`; the
/// remaining coefficients are zero. `rank` counts active columns only.
pub fn lsmc_fit_subset(
    xs: &[DVector<f64>],
    ys: &[f64],
    spec: &BasisSpec,
    scaling: &ScalingBox,
    ridge: f64,
    active: &[usize],
) -> Result<LsmcFit> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "need matching nonempty samples, got {} states and {} targets",
            xs.len(),
            ys.len()
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid(format!("ridge must be finite and nonnegative, got {ridge}")));
    }
    if active.is_empty() || active.iter().any(|&b| b >= spec.len()) {
        return Err(Error::invalid("active basis subset is empty or out of range"));
    }
    if let Some(k) = ys.iter().position(|y| !y.is_finite()) {
        return Err(Error::NonFinite(format!("regression target {k} is {}", ys[k])));
    }
    let p = active.len();
    let m = xs.len();
    let extra = if ridge > 0.0 { p } else { 0 };
    let rows = m + extra;
    let mut design = DMatrix::zeros(rows, p);
    for (r, x) in xs.iter().enumerate() {
        let phi = spec.features(scaling, x.as_slice());
        for (c, &b) in active.iter().enumerate() {
            design[(r, c)] = phi[b];
        }
    }
    let sr = ridge.sqrt();
    for c in 0..extra {
        design[(m + c, c)] = sr;
    }
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, m).copy_from_slice(ys);

    let qr = design.qr();
    let r = qr.r();
    qr.q_tr_mul(&mut rhs);
    let k = r.nrows();
    let c = rhs.rows(0, k).into_owned();

    let svd = r.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * rows.max(p) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let sub = svd
        .solve(&c, tol)
        .map_err(|e| Error::NonFinite(format!("least-squares solve failed: {e}")))?;
    if sub.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares coefficients".into()));
    }
    let mut coeffs = DVector::zeros(spec.len());
    for (c, &b) in active.iter().enumerate() {
        coeffs[b] = sub[c];
    }
    Ok(LsmcFit {
        coeffs,
        rank,
        rank_deficient: rank < p,
    })
}
