//! Policy improvement from a fitted value model.
//!
//! Two minimizers are provided:
//!
//! - [`hamiltonian_policy`]: `argmin_u L_i(x,u) + F_i(x,u)ᵀ∂ₓṼ_i(x)`;
//! - [`improve_policy`]: `argmin_u Q̃_i(x,u)` with the second-order Taylor
//!   Q-value `Q̃_i = L_i(x,u) + Ṽ_{i+1}(x+F_i(x,u)) + ½tr(Σ_iᵀ∂ₓₓṼ_{i+1}Σ_i)`.
//!
//! For control-affine problems with quadratic (plus optional L1) control cost
//! both reduce to a box-constrained quadratic in `u` and are solved in closed
//! form. Everything else falls back to a grid search over the control box.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problems::{ControlBox, DiscreteProblem, Policy};
use crate::sampling::{sample_forward_with, DriftProcess, SamplingOptions};
use crate::stats::{mean_estimate, MeanEstimate};
use crate::value_model::ValueModel;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOptions {
    /// Grid points per control dimension for the fallback search.
    pub grid_points: usize,
    /// Search range used when the control box is unbounded.
    pub search_range: Option<ControlBox>,
    /// Always use the grid search, even when a closed form exists.
    pub force_grid: bool,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            grid_points: 1001,
            search_range: None,
            force_grid: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QEval {
    pub value: f64,
    pub step: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

pub fn taylor_q(
    m: &ValueModel,
    dp: &DiscreteProblem,
    i: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<QEval> {
    let xbar = x + dp.drift(i, x, u);
    let jet = m.jet(i + 1, &xbar)?;
    let sigma = dp.diffusion(i, x);
    let trace = (sigma.transpose() * &jet.hess * &sigma).trace();
    let value = dp.running_cost(i, x, u) + jet.value + 0.5 * trace;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("Q-value at step {i}")));
    }
    Ok(QEval {
        value,
        step: i,
        x: x.as_slice().to_vec(),
        u: u.as_slice().to_vec(),
    })
}

/// Minimizer of `bᵀu + ½uᵀHu + λ‖u‖₁` over a box, when it is available in
/// closed form: unbounded without L1 (linear solve) or separable `H`
/// (coordinatewise soft-threshold then clip). Requires `H ≻ 0`.
fn box_quadratic_min(
    b: &DVector<f64>,
    h: &DMatrix<f64>,
    l1: f64,
    bounds: &ControlBox,
) -> Option<DVector<f64>> {
    let n = b.len();
    if n == 1 {
        let h = h[(0, 0)];
        if !(h > 0.0) {
            return None;
        }
        let u = soft_threshold(-b[0], l1) / h;
        return Some(bounds.clamp(&DVector::from_element(1, u)));
    }
    if l1 == 0.0 && !bounds.is_bounded() {
        return h.clone().cholesky().map(|c| -c.solve(b));
    }
    let diagonal = (0..n).all(|p| (0..n).all(|q| p == q || h[(p, q)] == 0.0));
    if !diagonal || (0..n).any(|p| !(h[(p, p)] > 0.0)) {
        return None;
    }
    let u = DVector::from_iterator(n, (0..n).map(|p| soft_threshold(-b[p], l1) / h[(p, p)]));
    Some(bounds.clamp(&u))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn search_box(dp: &DiscreteProblem, options: &PolicyOptions) -> Result<ControlBox> {
    if let Some(r) = &options.search_range {
        return Ok(r.clone());
    }
    if dp.control_box().is_bounded() {
        Ok(dp.control_box().clone())
    } else {
        Err(Error::invalid(
            "grid search over an unbounded control box needs a search range",
        ))
    }
}

/// Exhaustive search over a tensor grid; ties keep the first node.
pub fn grid_argmin<F>(objective: F, range: &ControlBox, points: usize) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    if points < 2 {
        return Err(Error::invalid("grid search needs at least two points per dimension"));
    }
    let dim = range.dim();
    let total = points
        .checked_pow(dim as u32)
        .ok_or_else(|| Error::invalid("control grid too large"))?;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut u = DVector::zeros(dim);
    for mut flat in 0..total {
        for c in 0..dim {
            let j = flat % points;
            flat /= points;
            let (lo, hi) = (range.lower()[c], range.upper()[c]);
            u[c] = if j + 1 == points {
                hi
            } else {
                lo + (hi - lo) * j as f64 / (points - 1) as f64
            };
        }
        let v = objective(&u)?;
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, u.clone()));
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

/// Control-affine structure at `(i, x)`: uncontrolled drift, discrete
/// control matrix `G = B·dt`, control cost `R·dt` and L1 weight `λ·dt`.
struct AffineParts {
    free_drift: DVector<f64>,
    g: DMatrix<f64>,
    r_dt: DMatrix<f64>,
    l1_dt: f64,
}

fn affine_parts(dp: &DiscreteProblem, i: usize, x: &DVector<f64>) -> Option<AffineParts> {
    let affine = dp.control_affine()?;
    let zero = DVector::zeros(dp.dim_u());
    Some(AffineParts {
        free_drift: dp.drift(i, x, &zero),
        g: dp.control_matrix(i, x)?,
        r_dt: &affine.control_cost * dp.dt(),
        l1_dt: affine.l1_weight * dp.dt(),
    })
}

pub fn hamiltonian_policy(
    m: &ValueModel,
    dp: &DiscreteProblem,
    i: usize,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    hamiltonian_policy_with(m, dp, i, x, &PolicyOptions::default())
}

pub fn hamiltonian_policy_with(
    m: &ValueModel,
    dp: &DiscreteProblem,
    i: usize,
    x: &DVector<f64>,
    options: &PolicyOptions,
) -> Result<DVector<f64>> {
    let p = m.grad(i, x)?;
    if !options.force_grid {
        if let Some(parts) = affine_parts(dp, i, x) {
            let b = parts.g.tr_mul(&p);
            let h = &parts.r_dt * 2.0;
            if let Some(u) = box_quadratic_min(&b, &h, parts.l1_dt, dp.control_box()) {
                return Ok(u);
            }
        }
    }
    let range = search_box(dp, options)?;
    grid_argmin(
        |u| Ok(dp.running_cost(i, x, u) + dp.drift(i, x, u).dot(&p)),
        &range,
        options.grid_points,
    )
}

pub fn improve_policy(
    m: &ValueModel,
    dp: &DiscreteProblem,
    i: usize,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    improve_policy_with(m, dp, i, x, &PolicyOptions::default())
}

pub fn improve_policy_with(
    m: &ValueModel,
    dp: &DiscreteProblem,
    i: usize,
    x: &DVector<f64>,
    options: &PolicyOptions,
) -> Result<DVector<f64>> {
    m.fit(i + 1)?;
    if !options.force_grid && m.is_quadratic() {
        if let Some(parts) = affine_parts(dp, i, x) {
            // Ṽ(x̄ + Gu) = Ṽ(x̄) + ∇Ṽ(x̄)ᵀGu + ½uᵀGᵀ∇²Ṽ G u exactly, and the
            // trace term does not depend on u.
            let xbar = x + &parts.free_drift;
            let jet = m.jet(i + 1, &xbar)?;
            let b = parts.g.tr_mul(&jet.grad);
            let mut h = &parts.r_dt * 2.0 + parts.g.tr_mul(&(&jet.hess * &parts.g));
            let sym = 0.5 * (&h + h.transpose());
            h = sym;
            if let Some(u) = box_quadratic_min(&b, &h, parts.l1_dt, dp.control_box()) {
                return Ok(u);
            }
        }
    }
    let range = search_box(dp, options)?;
    grid_argmin(|u| Ok(taylor_q(m, dp, i, x, u)?.value), &range, options.grid_points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImprovementRule {
    Hamiltonian,
    TaylorQ,
}

/// Greedy policy with respect to a fitted value model.
#[derive(Clone, Debug)]
pub struct ImprovedPolicy {
    model: Arc<ValueModel>,
    dp: DiscreteProblem,
    rule: ImprovementRule,
    options: PolicyOptions,
}

impl ImprovedPolicy {
    pub fn new(
        model: Arc<ValueModel>,
        dp: DiscreteProblem,
        rule: ImprovementRule,
        options: PolicyOptions,
    ) -> Result<Self> {
        let needed = match rule {
            ImprovementRule::Hamiltonian => 0..dp.steps(),
            ImprovementRule::TaylorQ => 1..dp.steps() + 1,
        };
        for step in needed {
            model.fit(step)?;
        }
        if options.force_grid || !dp.control_box().is_bounded() && dp.control_affine().is_none() {
            search_box(&dp, &options)?;
        }
        Ok(Self {
            model,
            dp,
            rule,
            options,
        })
    }

    pub fn try_control(&self, step: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let i = step.min(self.dp.steps() - 1);
        match self.rule {
            ImprovementRule::Hamiltonian => {
                hamiltonian_policy_with(&self.model, &self.dp, i, x, &self.options)
            }
            ImprovementRule::TaylorQ => improve_policy_with(&self.model, &self.dp, i, x, &self.options),
        }
    }
}

impl Policy for ImprovedPolicy {
    /// Falls back to the clamped zero control if the minimization fails
    /// numerically.
    fn control(&self, step: usize, x: &DVector<f64>) -> DVector<f64> {
        self.try_control(step, x)
            .unwrap_or_else(|_| self.dp.control_box().clamp(&DVector::zeros(self.dp.dim_u())))
    }
}

/// Monte Carlo estimate of the expected total cost `Σ L_i + g(X_N)` of
/// following `mu` from `x0`.
pub fn rollout_cost(dp: &DiscreteProblem, mu: &dyn Policy, samples: usize, seed: u64) -> Result<MeanEstimate> {
    let batch = sample_forward_with(
        dp,
        mu,
        &DriftProcess::OnPolicy,
        samples,
        seed,
        &SamplingOptions {
            drift_cap: f64::INFINITY,
        },
    )?;
    let costs: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let running: f64 = (0..dp.steps())
                .map(|i| {
                    let x = batch.state(k, i);
                    dp.running_cost(i, &x, &mu.control(i, &x))
                })
                .sum();
            running + dp.terminal_cost(&batch.state(k, dp.steps()))
        })
        .collect();
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("rollout cost".into()));
    }
    Ok(mean_estimate(costs))
}
