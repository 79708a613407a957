//! Accuracy and estimator diagnostics.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{taylor_triple, target, trace_outer, EstimatorKind, Transition};
use crate::oracles::GroundTruth;
use crate::problems::{DiscreteProblem, Policy};
use crate::rng::{self, Purpose};
use crate::sampling::{drift_correction, TrajectoryBatch};
use crate::stats::{mean_estimate, Welford};
use crate::value_model::{mean_std, ValueModel};

/// How finely a region is sampled for the RAE sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Resolution {
    /// Arithmetic progression `lower, lower + dx, …` up to `upper`.
    Spacing(f64),
    /// This many equally spaced points per coordinate, endpoints included.
    Points(usize),
}

impl Resolution {
    /// `dx = 1e-2` in one dimension, 9 points per axis otherwise.
    pub fn default_for(dim: usize) -> Self {
        if dim == 1 {
            Resolution::Spacing(1e-2)
        } else {
            Resolution::Points(9)
        }
    }

    fn axis(&self, lo: f64, hi: f64) -> Vec<f64> {
        match *self {
            Resolution::Spacing(dx) => {
                let n = ((hi - lo) / dx * (1.0 + 1e-12)).floor() as usize;
                (0..=n).map(|k| lo + k as f64 * dx).collect()
            }
            Resolution::Points(n) if n <= 1 => vec![0.5 * (lo + hi)],
            Resolution::Points(n) => (0..n)
                .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

/// Per-step boxes `x̄_i ± max(3σ_i, 1)` around the sample mean of a batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfidenceRegion {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub resolution: Resolution,
}

/// Region half-width floor.
pub const MIN_HALF_WIDTH: f64 = 1.0;

pub fn confidence_region(reference: &TrajectoryBatch) -> ConfidenceRegion {
    ConfidenceRegion::from_batch(reference, Resolution::default_for(reference.dim()))
}

impl ConfidenceRegion {
    pub fn from_batch(batch: &TrajectoryBatch, resolution: Resolution) -> Self {
        let steps = batch.steps();
        let dim = batch.dim();
        let mut lower = Vec::with_capacity(steps + 1);
        let mut upper = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let mut lo = Vec::with_capacity(dim);
            let mut hi = Vec::with_capacity(dim);
            for j in 0..dim {
                let (mean, std) =
                    mean_std((0..batch.samples()).map(|k| batch.state_slice(k, i)[j]));
                let half = (3.0 * std).max(MIN_HALF_WIDTH);
                lo.push(mean - half);
                hi.push(mean + half);
            }
            lower.push(lo);
            upper.push(hi);
        }
        Self {
            lower,
            upper,
            resolution,
        }
    }

    pub fn steps(&self) -> usize {
        self.lower.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.lower[0].len()
    }

    /// Smallest box containing every step's region.
    pub fn hull(&self) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        let lo = (0..dim)
            .map(|j| self.lower.iter().map(|l| l[j]).fold(f64::INFINITY, f64::min))
            .collect();
        let hi = (0..dim)
            .map(|j| self.upper.iter().map(|u| u[j]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        (lo, hi)
    }

    /// Tensor grid of evaluation points for step `i`.
    pub fn points(&self, i: usize) -> Vec<DVector<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|j| self.resolution.axis(self.lower[i][j], self.upper[i][j]))
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        (0..total)
            .map(|mut flat| {
                DVector::from_iterator(
                    axes.len(),
                    axes.iter().map(|a| {
                        let v = a[flat % a.len()];
                        flat /= a.len();
                        v
                    }),
                )
            })
            .collect()
    }
}

/// Relative absolute error
/// `Σ_x |Ṽ_i(x) − V*_i(x)| / Σ_x |mean(V*_i) − V*_i(x)|` over the region grid.
pub fn rae(m: &ValueModel, gt: &dyn GroundTruth, region: &ConfidenceRegion, i: usize) -> Result<f64> {
    if i > region.steps() {
        return Err(Error::invalid(format!("step {i} is outside the region's horizon")));
    }
    let pairs: Vec<(f64, f64)> = region
        .points(i)
        .par_iter()
        .map(|x| Ok((m.eval(i, x)?, gt.value(i, x)?)))
        .collect::<Result<_>>()?;
    rae_from_pairs(&pairs, i)
}

/// RAE from `(approximation, truth)` pairs.
pub fn rae_from_pairs(pairs: &[(f64, f64)], step: usize) -> Result<f64> {
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let numerator: f64 = pairs.iter().map(|(a, t)| (a - t).abs()).sum();
    let denominator: f64 = pairs.iter().map(|(_, t)| (mean - t).abs()).sum();
    let scale: f64 = pairs.iter().map(|p| p.1.abs()).sum();
    if !(denominator > 1e-15 * scale) {
        return Err(Error::DegenerateDenominator { step });
    }
    let r = numerator / denominator;
    if r.is_nan() {
        return Err(Error::NonFinite(format!("RAE at step {step}")));
    }
    Ok(r)
}

/// Per-step RAE table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RaeTable {
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
}

impl RaeTable {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// CSV with header `step,rae`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "rae"])?;
        for (s, v) in self.steps.iter().zip(&self.values) {
            w.write_record([s.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// RAE at every step `1..=N`. Step 0 is skipped: every path starts at `x0`,
/// so the regression there only identifies a constant.
pub fn rae_table(m: &ValueModel, gt: &dyn GroundTruth, region: &ConfidenceRegion) -> Result<RaeTable> {
    let steps: Vec<usize> = (1..=m.steps()).collect();
    let values = steps
        .iter()
        .map(|&i| rae(m, gt, region, i))
        .collect::<Result<_>>()?;
    Ok(RaeTable { steps, values })
}

pub fn mean_rae(m: &ValueModel, gt: &dyn GroundTruth, region: &ConfidenceRegion) -> Result<f64> {
    Ok(rae_table(m, gt, region)?.mean())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasVariance {
    pub kind: EstimatorKind,
    pub step: usize,
    pub mean: f64,
    /// `mean − V_i(x_pin)`; absent without an oracle.
    pub bias: Option<f64>,
    pub variance: f64,
    pub stderr: f64,
    pub resamples: usize,
}

/// Empirical bias and variance of one backward target with `(X_i, K_i)`
/// pinned and `W_i` redrawn `resamples` times.
#[allow(clippy::too_many_arguments)]
pub fn estimator_bias_variance(
    kind: EstimatorKind,
    dp: &DiscreteProblem,
    mu: &dyn Policy,
    m: &ValueModel,
    i: usize,
    x_pin: &DVector<f64>,
    k_pin: &DVector<f64>,
    resamples: usize,
    seed: u64,
    oracle: Option<&dyn GroundTruth>,
) -> Result<BiasVariance> {
    if i >= dp.steps() {
        return Err(Error::invalid(format!("step {i} has no successor")));
    }
    if resamples == 0 {
        return Err(Error::invalid("need at least one resample"));
    }
    let u = mu.control(i, x_pin);
    let sigma = dp.diffusion(i, x_pin);
    let correction = drift_correction(&dp.drift(i, x_pin, &u), k_pin, &sigma)?;
    let stage_cost = dp.running_cost(i, x_pin, &u);
    let noise_dim = sigma.ncols();
    let mut rng = rng::stream(seed, i as u64, Purpose::Resample);
    let mut buf = vec![0.0; noise_dim];
    let mut acc = Welford::new();
    for _ in 0..resamples {
        rng::fill_standard_normal(&mut rng, &mut buf);
        let noise = DVector::from_column_slice(&buf);
        let next = x_pin + k_pin + &sigma * &noise;
        let t = Transition {
            x: x_pin.clone(),
            drift: k_pin.clone(),
            noise,
            correction: correction.clone(),
            next,
            sigma: sigma.clone(),
            stage_cost,
        };
        acc.push(target(kind, m, i, &t)?);
    }
    let est = acc.finish();
    let bias = oracle
        .map(|gt| gt.value(i, x_pin).map(|v| est.mean - v))
        .transpose()?;
    Ok(BiasVariance {
        kind,
        step: i,
        mean: est.mean,
        bias,
        variance: est.variance,
        stderr: est.stderr,
        resamples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundOptions {
    /// Noise redraws per pinned cell.
    pub resamples: usize,
    /// Number of batch paths used as pinned cells (the first ones).
    pub cells: usize,
    pub seed: u64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            resamples: 1000,
            cells: 32,
            seed: 0,
        }
    }
}

/// One pinned `(X_i, K_i)` cell of a bias-bound check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCell {
    pub step: usize,
    pub trajectory: usize,
    pub correction_norm: f64,
    /// `|E_Q[Θ δ]|`, the bias the drift induces through the Taylor remainder.
    pub lhs: f64,
    /// `exp(½‖D‖²)·E_Q[δ²]^{1/2}`.
    pub rhs: f64,
    /// Standard error of the reweighted mean.
    pub stderr: f64,
    pub remainder_mean: f64,
    pub remainder_rms: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub step: usize,
    pub cells: Vec<BoundCell>,
    /// RMS over the batch of `Ṽ_{i+1}(X_{i+1}) − V_{i+1}(X_{i+1})`, when an
    /// oracle is available.
    pub fit_residual_rms: Option<f64>,
}

impl DiagnosticReport {
    pub fn holds(&self) -> bool {
        self.cells.iter().all(|c| c.holds)
    }

    /// CSV with header
    /// `step,trajectory,correction_norm,lhs,rhs,stderr,remainder_mean,remainder_rms,holds`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cells {
            w.serialize(c)?;
        }
        if self.cells.is_empty() {
            w.write_record([
                "step",
                "trajectory",
                "correction_norm",
                "lhs",
                "rhs",
                "stderr",
                "remainder_mean",
                "remainder_rms",
                "holds",
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Verify the Cauchy–Schwarz bound on the drift-induced bias of the Taylor
/// estimator at step `i`.
///
/// The remainder is `δ(W) = V_{i+1}(X̄ + ΣW) − Ȳ − Z̄ᵀW − ½WᵀM̄W` with the
/// triple from `m` and `V_{i+1}` from `oracle` (or `m` itself). For each
/// pinned cell, `W ~ N(0, I)` is redrawn and the one-step weight
/// `Θ = exp(−½‖D‖² + DᵀW)` turns sampling-measure averages into on-policy
/// ones. The verdict is `lhs ≤ rhs + 3·stderr`.
pub fn bias_bound_check(
    dp: &DiscreteProblem,
    mu: &dyn Policy,
    m: &ValueModel,
    batch: &TrajectoryBatch,
    i: usize,
    oracle: Option<&dyn GroundTruth>,
    options: &BoundOptions,
) -> Result<DiagnosticReport> {
    if i >= dp.steps() || batch.steps() != dp.steps() {
        return Err(Error::invalid(format!("step {i} has no successor in the batch")));
    }
    let next_value = |x: &DVector<f64>| -> Result<f64> {
        match oracle {
            Some(gt) => gt.value(i + 1, x),
            None => m.eval(i + 1, x),
        }
    };
    let cells = options.cells.min(batch.samples());
    let rows: Vec<BoundCell> = (0..cells)
        .into_par_iter()
        .map(|k| {
            let x = batch.state(k, i);
            let drift = batch.drift(k, i);
            let u = mu.control(i, &x);
            let sigma = dp.diffusion(i, &x);
            let d = drift_correction(&dp.drift(i, &x, &u), &drift, &sigma)?;
            let tt = taylor_triple(m, i, &x, &drift, &sigma)?;
            let mut rng = rng::stream(options.seed, k as u64, Purpose::Resample);
            let mut buf = vec![0.0; sigma.ncols()];
            let mut weighted = Vec::with_capacity(options.resamples);
            let mut plain = Welford::new();
            let mut square = Welford::new();
            for _ in 0..options.resamples {
                rng::fill_standard_normal(&mut rng, &mut buf);
                let w = DVector::from_column_slice(&buf);
                let xn = &tt.xbar + &sigma * &w;
                let delta = next_value(&xn)? - tt.ybar - tt.zbar.dot(&w) - 0.5 * trace_outer(&tt.mbar, &w);
                let theta = (-0.5 * d.norm_squared() + d.dot(&w)).exp();
                weighted.push(theta * delta);
                plain.push(delta);
                square.push(delta * delta);
            }
            let est = mean_estimate(weighted);
            let lhs = est.mean.abs();
            let rhs = (0.5 * d.norm_squared()).exp() * square.mean().sqrt();
            Ok(BoundCell {
                step: i,
                trajectory: k,
                correction_norm: d.norm(),
                lhs,
                rhs,
                stderr: est.stderr,
                remainder_mean: plain.mean(),
                remainder_rms: square.mean().sqrt(),
                holds: lhs <= rhs + 3.0 * est.stderr,
            })
        })
        .collect::<Result<_>>()?;
    let fit_residual_rms = match oracle {
        Some(gt) => {
            let mut acc = 0.0;
            for x in batch.states_at(i + 1) {
                let r = m.eval(i + 1, &x)? - gt.value(i + 1, &x)?;
                acc += r * r;
            }
            Some((acc / batch.samples() as f64).sqrt())
        }
        None => None,
    };
    Ok(DiagnosticReport {
        step: i,
        cells: rows,
        fit_residual_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::FnTruth;
    use crate::problems::{discretize, ContinuousProblem, ControlBox};
    use crate::sampling::{sample_forward, DriftProcess};
    use crate::value_model::{BasisSpec, ScalingBox};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn region_1d(lo: f64, hi: f64, dx: f64) -> ConfidenceRegion {
        ConfidenceRegion {
            lower: vec![vec![lo]; 2],
            upper: vec![vec![hi]; 2],
            resolution: Resolution::Spacing(dx),
        }
    }

    fn model_1d(coeffs: &[f64]) -> ValueModel {
        let mut m = ValueModel::new(BasisSpec::new(1, coeffs.len() - 1).unwrap(), 1);
        for i in 0..=1 {
            m.set_fit(i, ScalingBox::identity(1), DVector::from_column_slice(coeffs), coeffs.len())
                .unwrap();
        }
        m
    }

    #[test]
    fn region_examples() {
        let r = |mean: f64, std: f64| {
            let half = (3.0 * std).max(MIN_HALF_WIDTH);
            (mean - half, mean + half)
        };
        assert_eq!(r(0.0, 0.1), (-1.0, 1.0));
        assert_eq!(r(2.0, 0.5), (0.5, 3.5));
    }

    #[test]
    fn single_path_region_is_floored() {
        let cp = ContinuousProblem::new(
            "p",
            1.0,
            v1(0.25),
            Arc::new(|_t, _x, _u| DVector::zeros(1)),
            Arc::new(|_t, _x| DMatrix::identity(1, 1)),
            Arc::new(|_t, _x, _u| 0.0),
            Arc::new(|_x| 0.0),
            ControlBox::symmetric(1, 1.0).unwrap(),
        )
        .unwrap();
        let dp = discretize(&cp, 3).unwrap();
        let zero = |_i: usize, _x: &DVector<f64>| DVector::zeros(1);
        let batch = sample_forward(&dp, &zero, &DriftProcess::OnPolicy, 1, 2).unwrap();
        let region = confidence_region(&batch);
        for i in 0..=3 {
            let x = batch.state(0, i)[0];
            assert_eq!(region.lower[i][0], x - 1.0);
            assert_eq!(region.upper[i][0], x + 1.0);
        }
    }

    #[test]
    fn spacing_grid_includes_both_ends() {
        let r = region_1d(-1.0, 1.0, 0.01);
        let pts = r.points(0);
        assert_eq!(pts.len(), 201);
        assert!((pts[200][0] - 1.0).abs() < 1e-12);
        let r2 = ConfidenceRegion {
            lower: vec![vec![0.0, 0.0]],
            upper: vec![vec![1.0, 2.0]],
            resolution: Resolution::Points(9),
        };
        assert_eq!(r2.points(0).len(), 81);
    }

    #[test]
    fn rae_zero_and_one() {
        let region = region_1d(-1.0, 2.0, 0.01);
        let truth = FnTruth::new(|_i, x| x[0] * x[0]);
        let exact = model_1d(&[0.5, 0.0, 0.5]);
        assert!(rae(&exact, &truth, &region, 1).unwrap() < 1e-15);
        let pts = region.points(1);
        let mean = pts.iter().map(|x| x[0] * x[0]).sum::<f64>() / pts.len() as f64;
        let constant = model_1d(&[mean, 0.0, 0.0]);
        assert!((rae(&constant, &truth, &region, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rae_matches_direct_sum() {
        let region = region_1d(-1.5, 0.5, 0.01);
        let truth = FnTruth::new(|_i, x| 2.0 * x[0] * x[0] - x[0] + 0.3);
        // 2x² − x + 0.3 = 1.3 − T₁ + T₂, plus a perturbation 0.1 + 0.05x.
        let m = model_1d(&[1.3 + 0.1, -1.0 + 0.05, 1.0]);
        let xs: Vec<f64> = (0..=200).map(|k| -1.5 + 0.01 * k as f64).collect();
        let f = |x: f64| 2.0 * x * x - x + 0.3;
        let mean = xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64;
        let num: f64 = xs.iter().map(|&x| (0.1 + 0.05 * x).abs()).sum();
        let den: f64 = xs.iter().map(|&x| (mean - f(x)).abs()).sum();
        let got = rae(&m, &truth, &region, 0).unwrap();
        assert!((got - num / den).abs() < 1e-12 * (num / den));
    }

    #[test]
    fn rae_shift_invariant() {
        let region = region_1d(-1.0, 1.0, 0.05);
        let truth = FnTruth::new(|_i, x| x[0].exp());
        let shifted_truth = FnTruth::new(|_i, x| x[0].exp() + 7.0);
        let mut m = model_1d(&[1.2, 1.1, 0.3]);
        let a = rae(&m, &truth, &region, 0).unwrap();
        m.add_constant(7.0);
        let b = rae(&m, &shifted_truth, &region, 0).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn constant_truth_is_degenerate() {
        let region = region_1d(-1.0, 1.0, 0.1);
        let truth = FnTruth::new(|_i, _x| 4.0);
        let m = model_1d(&[4.0, 0.0]);
        assert!(matches!(rae(&m, &truth, &region, 1), Err(Error::DegenerateDenominator { step: 1 })));
    }

    fn scalar_problem() -> DiscreteProblem {
        let cp = ContinuousProblem::new(
            "s",
            1.0,
            v1(0.0),
            Arc::new(|_t, x, u| DVector::from_element(1, -x[0] + u[0])),
            Arc::new(|_t, _x| DMatrix::identity(1, 1)),
            Arc::new(|_t, x, u| x[0] * x[0] + u[0] * u[0]),
            Arc::new(|x| x[0] * x[0]),
            ControlBox::symmetric(1, 5.0).unwrap(),
        )
        .unwrap();
        discretize(&cp, 1).unwrap()
    }

    #[test]
    fn noiseless_has_zero_variance_noisy_does_not() {
        let dp = scalar_problem();
        let mu = |_i: usize, x: &DVector<f64>| DVector::from_element(1, -0.5 * x[0]);
        let m = model_1d(&[0.1, 0.7, 0.4, 0.2]);
        let x = v1(0.3);
        let k = v1(-0.2);
        let a = estimator_bias_variance(EstimatorKind::TaylorNoiseless, &dp, &mu, &m, 0, &x, &k, 500, 1, None)
            .unwrap();
        assert_eq!(a.variance, 0.0);
        assert!(a.bias.is_none());
        let b = estimator_bias_variance(EstimatorKind::EmNoisy, &dp, &mu, &m, 0, &x, &k, 500, 1, None).unwrap();
        assert!(b.variance > 0.0);
    }

    #[test]
    fn quadratic_model_has_zero_remainder() {
        let dp = scalar_problem();
        let mu = |_i: usize, _x: &DVector<f64>| DVector::zeros(1);
        let m = model_1d(&[0.5, 0.0, 0.5]);
        let batch = sample_forward(&dp, &mu, &DriftProcess::feedback(|_i, x| DVector::from_element(1, 0.1 * x[0] + 0.05)), 8, 3)
            .unwrap();
        let truth = FnTruth::new(|_i, x| x[0] * x[0]);
        let report = bias_bound_check(
            &dp,
            &mu,
            &m,
            &batch,
            0,
            Some(&truth),
            &BoundOptions {
                resamples: 50,
                cells: 4,
                seed: 2,
            },
        )
        .unwrap();
        assert!(report.holds());
        for c in &report.cells {
            assert!(c.lhs < 1e-12 && c.rhs < 1e-12);
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,trajectory,correction_norm,lhs,rhs,stderr,"));
        assert_eq!(text.lines().count(), 5);
    }
}
