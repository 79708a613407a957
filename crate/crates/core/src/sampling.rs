//! Forward trajectory generation under an arbitrary sampling drift.
//!
//! Paths follow `X_{i+1} = X_i + K_i + Σ_i W_i` with `W_i ~ N(0, I)`. For the
//! reference policy `μ` each step also records the drift correction
//! `D_i = Σ_i⁻¹(F_i(X_i, μ_i(X_i)) − K_i)` and the running log of the discrete
//! Girsanov weight `Θ_{i+1} = Θ_i · exp(−½‖D_i‖² + D_iᵀW_i)`, `Θ_0 = 1`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problems::{DiscreteProblem, Policy};
use crate::rng::{self, Purpose};
use crate::stats::{mean_estimate, MeanEstimate};

pub type FeedbackDriftFn = Arc<dyn Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type RandomizedDriftFn =
    Arc<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// How the sampling drift `K_i` is produced.
#[derive(Clone)]
pub enum DriftProcess {
    /// `K_i = F_i(X_i, μ_i(X_i))` for the batch's reference policy.
    OnPolicy,
    /// `K_i = 𝒦_i(X_i)`, given in state-increment units.
    Feedback(FeedbackDriftFn),
    /// `K_i = 𝒦_i(X_i, ξ_i)` with `ξ_i ~ N(0, I_aux_dim)` drawn from a stream
    /// separate from the Brownian one.
    Randomized {
        aux_dim: usize,
        map: RandomizedDriftFn,
    },
}

impl DriftProcess {
    pub fn feedback<F>(f: F) -> Self
    where
        F: Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        DriftProcess::Feedback(Arc::new(f))
    }
}

impl std::fmt::Debug for DriftProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DriftProcess::OnPolicy => write!(f, "OnPolicy"),
            DriftProcess::Feedback(_) => write!(f, "Feedback(..)"),
            DriftProcess::Randomized { aux_dim, .. } => {
                write!(f, "Randomized {{ aux_dim: {aux_dim} }}")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingOptions {
    /// Upper bound on `‖D_i‖`; exceeding it aborts sampling.
    pub drift_cap: f64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self { drift_cap: 10.0 }
    }
}

/// `M` forward paths stored as flat row-major arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    samples: usize,
    steps: usize,
    dim: usize,
    seed: u64,
    states: Vec<f64>,
    noises: Vec<f64>,
    drifts: Vec<f64>,
    corrections: Vec<f64>,
    log_theta: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn node(&self, k: usize, i: usize) -> usize {
        (k * (self.steps + 1) + i) * self.dim
    }

    fn edge(&self, k: usize, i: usize) -> usize {
        (k * self.steps + i) * self.dim
    }

    pub fn state_slice(&self, k: usize, i: usize) -> &[f64] {
        let o = self.node(k, i);
        &self.states[o..o + self.dim]
    }

    pub fn state(&self, k: usize, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.state_slice(k, i))
    }

    pub fn noise(&self, k: usize, i: usize) -> DVector<f64> {
        let o = self.edge(k, i);
        DVector::from_column_slice(&self.noises[o..o + self.dim])
    }

    pub fn drift(&self, k: usize, i: usize) -> DVector<f64> {
        let o = self.edge(k, i);
        DVector::from_column_slice(&self.drifts[o..o + self.dim])
    }

    pub fn correction(&self, k: usize, i: usize) -> DVector<f64> {
        let o = self.edge(k, i);
        DVector::from_column_slice(&self.corrections[o..o + self.dim])
    }

    pub fn log_theta(&self, k: usize, i: usize) -> f64 {
        self.log_theta[k * (self.steps + 1) + i]
    }

    /// `Θ[k][i]`; may underflow to zero or overflow for large corrections,
    /// see [`girsanov_weights`] for a checked version.
    pub fn theta(&self, k: usize, i: usize) -> f64 {
        self.log_theta(k, i).exp()
    }

    /// All states at step `i`.
    pub fn states_at(&self, i: usize) -> Vec<DVector<f64>> {
        (0..self.samples).map(|k| self.state(k, i)).collect()
    }

    pub fn path(&self, k: usize) -> PathRef<'_> {
        PathRef { batch: self, k }
    }

    /// Largest `‖D[k][i]‖` in the batch.
    pub fn max_correction_norm(&self) -> f64 {
        self.corrections
            .chunks(self.dim)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `traj, step, x_0.., w_0.., theta`. Rows at the final
    /// step leave the noise columns empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["traj".to_string(), "step".to_string()];
        header.extend((0..self.dim).map(|j| format!("x_{j}")));
        header.extend((0..self.dim).map(|j| format!("w_{j}")));
        header.push("theta".into());
        w.write_record(&header)?;
        for k in 0..self.samples {
            for i in 0..=self.steps {
                let mut rec = vec![k.to_string(), i.to_string()];
                rec.extend(self.state_slice(k, i).iter().map(|v| v.to_string()));
                if i < self.steps {
                    rec.extend(self.noise(k, i).iter().map(|v| v.to_string()));
                } else {
                    rec.extend(std::iter::repeat_n(String::new(), self.dim));
                }
                rec.push(self.theta(k, i).to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A single trajectory of a batch.
#[derive(Clone, Copy)]
pub struct PathRef<'a> {
    batch: &'a TrajectoryBatch,
    k: usize,
}

impl PathRef<'_> {
    pub fn index(&self) -> usize {
        self.k
    }
    pub fn state(&self, i: usize) -> DVector<f64> {
        self.batch.state(self.k, i)
    }
    pub fn noise(&self, i: usize) -> DVector<f64> {
        self.batch.noise(self.k, i)
    }
    pub fn drift(&self, i: usize) -> DVector<f64> {
        self.batch.drift(self.k, i)
    }
    pub fn correction(&self, i: usize) -> DVector<f64> {
        self.batch.correction(self.k, i)
    }
    /// `W^Q_i = W^P_i − D_i`.
    pub fn q_noise(&self, i: usize) -> DVector<f64> {
        self.noise(i) - self.correction(i)
    }
    pub fn theta(&self, i: usize) -> f64 {
        self.batch.theta(self.k, i)
    }
}

/// `Σ⁻¹(F − K)`.
pub fn drift_correction(
    f_val: &DVector<f64>,
    k_val: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    solve_diffusion(sigma, &(f_val - k_val)).ok_or(Error::SingularDiffusion { step: None })
}

pub(crate) fn solve_diffusion(sigma: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if sigma.nrows() != sigma.ncols() || sigma.nrows() != rhs.len() {
        return None;
    }
    if sigma.nrows() == 1 {
        let s = sigma[(0, 0)];
        return (s != 0.0 && s.is_finite()).then(|| DVector::from_element(1, rhs[0] / s));
    }
    let lu = sigma.clone().lu();
    if !lu.is_invertible() {
        return None;
    }
    lu.solve(rhs).filter(|d| d.iter().all(|v| v.is_finite()))
}

struct PathData {
    states: Vec<f64>,
    noises: Vec<f64>,
    drifts: Vec<f64>,
    corrections: Vec<f64>,
    log_theta: Vec<f64>,
}

pub fn sample_forward(
    dp: &DiscreteProblem,
    mu: &dyn Policy,
    drift: &DriftProcess,
    samples: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    sample_forward_with(dp, mu, drift, samples, seed, &SamplingOptions::default())
}

pub fn sample_forward_with(
    dp: &DiscreteProblem,
    mu: &dyn Policy,
    drift: &DriftProcess,
    samples: usize,
    seed: u64,
    options: &SamplingOptions,
) -> Result<TrajectoryBatch> {
    if samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let paths: Vec<PathData> = (0..samples)
        .into_par_iter()
        .map(|k| sample_path(dp, mu, drift, k, seed, options))
        .collect::<Result<_>>()?;

    let n = dp.dim_x();
    let steps = dp.steps();
    let mut batch = TrajectoryBatch {
        samples,
        steps,
        dim: n,
        seed,
        states: Vec::with_capacity(samples * (steps + 1) * n),
        noises: Vec::with_capacity(samples * steps * n),
        drifts: Vec::with_capacity(samples * steps * n),
        corrections: Vec::with_capacity(samples * steps * n),
        log_theta: Vec::with_capacity(samples * (steps + 1)),
    };
    for p in paths {
        batch.states.extend(p.states);
        batch.noises.extend(p.noises);
        batch.drifts.extend(p.drifts);
        batch.corrections.extend(p.corrections);
        batch.log_theta.extend(p.log_theta);
    }
    Ok(batch)
}

fn sample_path(
    dp: &DiscreteProblem,
    mu: &dyn Policy,
    drift: &DriftProcess,
    k: usize,
    seed: u64,
    options: &SamplingOptions,
) -> Result<PathData> {
    let n = dp.dim_x();
    let steps = dp.steps();
    let mut brownian = rng::stream(seed, k as u64, Purpose::Brownian);
    let mut auxiliary = rng::stream(seed, k as u64, Purpose::Auxiliary);

    let mut data = PathData {
        states: Vec::with_capacity((steps + 1) * n),
        noises: Vec::with_capacity(steps * n),
        drifts: Vec::with_capacity(steps * n),
        corrections: Vec::with_capacity(steps * n),
        log_theta: Vec::with_capacity(steps + 1),
    };
    let mut x = dp.x0().clone();
    let mut log_theta = 0.0;
    data.states.extend(x.iter());
    data.log_theta.push(log_theta);

    let mut w = DVector::zeros(n);
    for i in 0..steps {
        let f = dp.policy_drift(i, &x, mu);
        let sigma = dp.diffusion(i, &x);
        let k_i = match drift {
            DriftProcess::OnPolicy => f.clone(),
            DriftProcess::Feedback(map) => map(i, &x),
            DriftProcess::Randomized { aux_dim, map } => {
                let mut xi = DVector::zeros(*aux_dim);
                rng::fill_standard_normal(&mut auxiliary, xi.as_mut_slice());
                map(i, &x, &xi)
            }
        };
        if k_i.len() != n {
            return Err(Error::invalid(format!(
                "drift process returned length {} at step {i}, expected {n}",
                k_i.len()
            )));
        }
        let d = solve_diffusion(&sigma, &(&f - &k_i))
            .ok_or(Error::SingularDiffusion { step: Some(i) })?;
        let norm = d.norm();
        if !(norm <= options.drift_cap) {
            return Err(Error::DriftUnbounded {
                trajectory: k,
                step: i,
                norm,
                cap: options.drift_cap,
            });
        }
        rng::fill_standard_normal(&mut brownian, w.as_mut_slice());
        log_theta += log_weight_increment(&d, &w);
        x = &x + &k_i + &sigma * &w;

        data.noises.extend(w.iter());
        data.drifts.extend(k_i.iter());
        data.corrections.extend(d.iter());
        data.states.extend(x.iter());
        data.log_theta.push(log_theta);
    }
    Ok(data)
}

/// `−½‖D‖² + Dᵀ W`.
fn log_weight_increment(d: &DVector<f64>, w: &DVector<f64>) -> f64 {
    -0.5 * d.norm_squared() + d.dot(w)
}

/// Girsanov weights `Θ[k][i]` recomputed from the stored corrections and
/// noises.
#[derive(Clone, Debug, PartialEq)]
pub struct GirsanovWeights {
    steps: usize,
    values: Vec<f64>,
}

impl GirsanovWeights {
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values[k * (self.steps + 1) + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn girsanov_weights(batch: &TrajectoryBatch) -> Result<GirsanovWeights> {
    let steps = batch.steps;
    let mut values = Vec::with_capacity(batch.samples * (steps + 1));
    for k in 0..batch.samples {
        let mut log = 0.0;
        values.push(1.0);
        for i in 0..steps {
            log += log_weight_increment(&batch.correction(k, i), &batch.noise(k, i));
            let theta = log.exp();
            if !(theta.is_finite() && theta > 0.0) {
                return Err(Error::WeightOverflow {
                    trajectory: k,
                    step: i + 1,
                    log_weight: log,
                });
            }
            values.push(theta);
        }
    }
    Ok(GirsanovWeights { steps, values })
}

/// `(1/M) Σ_k Θ[k][upto] · h(path k)`, the empirical `E_P[Θ h] ≈ E_Q[h]`.
pub fn reweighted_expectation<H>(h: H, batch: &TrajectoryBatch, upto: usize) -> Result<MeanEstimate>
where
    H: Fn(&PathRef<'_>) -> f64 + Sync,
{
    if upto > batch.steps {
        return Err(Error::invalid(format!(
            "step {upto} is beyond the batch horizon {}",
            batch.steps
        )));
    }
    let values: Vec<f64> = (0..batch.samples)
        .into_par_iter()
        .map(|k| {
            let p = batch.path(k);
            p.theta(upto) * h(&p)
        })
        .collect();
    Ok(mean_estimate(values))
}
