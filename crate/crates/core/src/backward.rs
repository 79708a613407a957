//! The backward pass: fit `g` at the horizon, then regress the chosen
//! estimator's targets on `X_i` for `i = N−1, …, 0`.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{estimate_targets, EstimatorKind};
use crate::problems::{DiscreteProblem, Policy};
use crate::sampling::TrajectoryBatch;
use crate::value_model::{lsmc_fit_subset, BasisSpec, ScalingBox, ValueModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardOptions {
    pub ridge: f64,
    /// Floor on the per-step scaling half-width, so degenerate steps (all
    /// paths at `x0`) still get a usable box.
    pub min_half_width: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-10,
            min_half_width: 1.0,
        }
    }
}

pub fn backward_pass(
    dp: &DiscreteProblem,
    mu: &dyn Policy,
    batch: &TrajectoryBatch,
    kind: EstimatorKind,
    spec: &BasisSpec,
    ridge: f64,
) -> Result<ValueModel> {
    let options = BackwardOptions {
        ridge,
        ..BackwardOptions::default()
    };
    backward_pass_with(dp, mu, batch, kind, spec, &options)
}

pub fn backward_pass_with(
    dp: &DiscreteProblem,
    mu: &dyn Policy,
    batch: &TrajectoryBatch,
    kind: EstimatorKind,
    spec: &BasisSpec,
    options: &BackwardOptions,
) -> Result<ValueModel> {
    let n = dp.steps();
    if batch.steps() != n || batch.dim() != dp.dim_x() {
        return Err(Error::invalid(format!(
            "batch shape ({} steps, dim {}) does not match problem ({n} steps, dim {})",
            batch.steps(),
            batch.dim(),
            dp.dim_x()
        )));
    }
    if spec.dim() != dp.dim_x() {
        return Err(Error::invalid("basis dimension does not match the state dimension"));
    }
    let mut model = ValueModel::new(spec.clone(), n);

    let terminal_states = batch.states_at(n);
    let terminal: Vec<f64> = terminal_states
        .par_iter()
        .map(|x| dp.terminal_cost(x))
        .collect();
    fit_step(&mut model, n, &terminal_states, &terminal, options).map_err(|e| e.at_step(n))?;

    for i in (0..n).rev() {
        let targets = estimate_targets(kind, &model, dp, mu, batch, i).map_err(|e| e.at_step(i))?;
        fit_step(&mut model, i, &batch.states_at(i), &targets.values, options)
            .map_err(|e| e.at_step(i))?;
    }
    Ok(model)
}

fn fit_step(
    model: &mut ValueModel,
    i: usize,
    xs: &[DVector<f64>],
    ys: &[f64],
    options: &BackwardOptions,
) -> Result<()> {
    let scaling = ScalingBox::from_states(xs, options.min_half_width)?;
    let active = identifiable_features(model.basis(), xs);
    let fit = lsmc_fit_subset(xs, ys, model.basis(), &scaling, options.ridge, &active)?;
    model.set_fit(i, scaling, fit.coeffs, fit.rank)
}

/// Basis functions of degree zero in every coordinate on which the samples
/// do not vary. Along such a coordinate higher Chebyshev terms are constant
/// and a minimum-norm fit would spread the intercept across them.
pub fn identifiable_features(spec: &BasisSpec, xs: &[DVector<f64>]) -> Vec<usize> {
    let dim = spec.dim();
    let frozen: Vec<bool> = (0..dim)
        .map(|j| {
            let first = xs[0][j];
            xs.iter().all(|x| x[j] == first)
        })
        .collect();
    spec.indices()
        .iter()
        .enumerate()
        .filter(|(_, idx)| idx.iter().zip(&frozen).all(|(&d, &f)| !f || d == 0))
        .map(|(b, _)| b)
        .collect()
}
