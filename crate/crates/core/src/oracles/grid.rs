//! Stochastic Bellman recursion on a tensor state grid.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracles::quadrature::GaussHermite;
use crate::problems::{ControlBox, DiscreteProblem, Policy};

/// Uniform axis with `nodes` points from `lo` to `hi` inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || nodes < 2 {
            return Err(Error::invalid(format!(
                "axis needs lo < hi and at least two nodes, got [{lo}, {hi}] with {nodes}"
            )));
        }
        Ok(Self { lo, hi, nodes })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j + 1 == self.nodes {
            self.hi
        } else {
            self.lo + j as f64 * self.spacing()
        }
    }

    /// Cell index and local coordinate; the coordinate leaves `[0, 1]` when
    /// `x` is outside the axis (linear extrapolation).
    fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.lo) / self.spacing();
        let j = (s.floor().max(0.0) as usize).min(self.nodes - 2);
        (j, s - j as f64)
    }

    fn contains(&self, x: f64, margin: f64) -> bool {
        x >= self.lo - margin && x <= self.hi + margin
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    pub control_nodes: usize,
    /// Control search range; required when the problem's box is unbounded.
    pub control_range: Option<ControlBox>,
    pub gh_nodes: usize,
    /// Golden-section refinement of the best control node between its
    /// neighbours (scalar controls only).
    pub refine_control: bool,
    /// Distance outside the grid beyond which an extrapolated query counts
    /// as an escape.
    pub escape_margin: f64,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self {
            axes,
            control_nodes: 201,
            control_range: None,
            gh_nodes: 21,
            refine_control: true,
            escape_margin: 0.0,
        }
    }

    /// Grid over `[lower, upper]` with every axis widened by the fraction
    /// `widen` of its width, split evenly between the two ends.
    pub fn covering(lower: &[f64], upper: &[f64], widen: f64, nodes: usize) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid("grid bounds differ in length"));
        }
        let axes = lower
            .iter()
            .zip(upper)
            .map(|(&lo, &hi)| {
                let pad = 0.5 * widen * (hi - lo);
                Axis::new(lo - pad, hi + pad, nodes)
            })
            .collect::<Result<_>>()?;
        Ok(Self::new(axes))
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }
}

/// Gridded optimal value and control tables.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTruth {
    pub axes: Vec<Axis>,
    pub dim_u: usize,
    /// `values[i][node]`, `i = 0..=N`.
    pub values: Vec<Vec<f64>>,
    /// `controls[i][node·dim_u + c]`, `i = 0..N−1`.
    pub controls: Vec<Vec<f64>>,
    /// Number of quadrature queries per step that left the grid by more than
    /// the escape margin.
    pub escapes: Vec<u64>,
    pub control_box: ControlBox,
}

fn node_state(axes: &[Axis], mut flat: usize) -> DVector<f64> {
    let mut x = DVector::zeros(axes.len());
    for (j, ax) in axes.iter().enumerate() {
        x[j] = ax.node(flat % ax.nodes);
        flat /= ax.nodes;
    }
    x
}

/// Multilinear interpolation with linear extrapolation; nodes are stored
/// with the first axis varying fastest.
fn interpolate(axes: &[Axis], table: &[f64], x: &[f64]) -> f64 {
    if axes.len() == 1 {
        let (j, t) = axes[0].locate(x[0]);
        return table[j] + t * (table[j + 1] - table[j]);
    }
    let d = axes.len();
    let mut base = 0;
    let mut stride = 1;
    let mut cells = Vec::with_capacity(d);
    for (ax, &xj) in axes.iter().zip(x) {
        let (j, t) = ax.locate(xj);
        base += j * stride;
        cells.push((stride, t));
        stride *= ax.nodes;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = base;
        for (bit, &(stride, t)) in cells.iter().enumerate() {
            if corner >> bit & 1 == 1 {
                w *= t;
                idx += stride;
            } else {
                w *= 1.0 - t;
            }
        }
        acc += w * table[idx];
    }
    acc
}

impl GridTruth {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn node(&self, flat: usize) -> DVector<f64> {
        node_state(&self.axes, flat)
    }

    fn check_domain(&self, i: usize, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid("query dimension does not match the grid"));
        }
        let inside = self
            .axes
            .iter()
            .zip(x.iter())
            .all(|(ax, &xj)| ax.contains(xj, 0.5 * (ax.hi - ax.lo)));
        if inside {
            Ok(())
        } else {
            Err(Error::OutOfDomain { step: i })
        }
    }

    pub fn value(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        if i >= self.values.len() {
            return Err(Error::invalid(format!("step {i} beyond grid horizon")));
        }
        self.check_domain(i, x)?;
        Ok(interpolate(&self.axes, &self.values[i], x.as_slice()))
    }

    /// Interpolated optimal control, clamped to the control box.
    pub fn control(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let i = i.min(self.steps() - 1);
        self.check_domain(i, x)?;
        let table = &self.controls[i];
        if self.dim_u == 1 {
            let u = DVector::from_element(1, interpolate(&self.axes, table, x.as_slice()));
            return Ok(self.control_box.clamp(&u));
        }
        let nodes = self.node_count();
        let u = DVector::from_iterator(
            self.dim_u,
            (0..self.dim_u).map(|c| {
                let column: Vec<f64> = (0..nodes).map(|n| table[n * self.dim_u + c]).collect();
                interpolate(&self.axes, &column, x.as_slice())
            }),
        );
        Ok(self.control_box.clamp(&u))
    }

    /// CSV with header `step,x,value,u_star` (indexed `x_j`, `u_star_c`
    /// columns in higher dimensions); `u_star` is empty at the horizon.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        if self.dim() == 1 {
            header.push("x".into());
        } else {
            header.extend((0..self.dim()).map(|j| format!("x_{j}")));
        }
        header.push("value".into());
        if self.dim_u == 1 {
            header.push("u_star".into());
        } else {
            header.extend((0..self.dim_u).map(|c| format!("u_star_{c}")));
        }
        w.write_record(&header)?;
        for (i, values) in self.values.iter().enumerate() {
            for (n, v) in values.iter().enumerate() {
                let mut row = vec![i.to_string()];
                row.extend(self.node(n).iter().map(|x| x.to_string()));
                row.push(v.to_string());
                for c in 0..self.dim_u {
                    row.push(
                        self.controls
                            .get(i)
                            .map(|t| t[n * self.dim_u + c].to_string())
                            .unwrap_or_default(),
                    );
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Feedback policy read off a [`GridTruth`].
#[derive(Clone, Debug)]
pub struct GridPolicy {
    pub truth: Arc<GridTruth>,
}

impl Policy for GridPolicy {
    fn control(&self, step: usize, x: &DVector<f64>) -> DVector<f64> {
        match self.truth.control(step, x) {
            Ok(u) => u,
            // Far outside the grid: hold the nearest edge node's control.
            Err(_) => {
                let clamped = DVector::from_iterator(
                    x.len(),
                    self.truth.axes.iter().zip(x.iter()).map(|(a, &v)| v.clamp(a.lo, a.hi)),
                );
                self.truth
                    .control(step, &clamped)
                    .expect("clamped state lies on the grid")
            }
        }
    }
}

const GOLDEN_ITERATIONS: usize = 60;

fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_ITERATIONS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn control_candidates(range: &ControlBox, nodes: usize) -> Vec<DVector<f64>> {
    let dim = range.dim();
    let axes: Vec<Axis> = (0..dim)
        .map(|c| Axis {
            lo: range.lower()[c],
            hi: range.upper()[c],
            nodes,
        })
        .collect();
    let total = nodes.pow(dim as u32);
    (0..total).map(|n| node_state(&axes, n)).collect()
}

/// Backward dynamic programming
/// `V_i(x) = min_u L_i(x,u) + Σ_q w_q V_{i+1}(x + F_i(x,u) + Σ_i(x) z_q)`
/// on the grid nodes, with `V_N = g`.
pub fn grid_bellman(dp: &DiscreteProblem, grid: &GridSpec) -> Result<GridTruth> {
    let dim = dp.dim_x();
    if dim > 2 {
        return Err(Error::invalid(format!(
            "grid oracle supports at most 2 state dimensions, got {dim}"
        )));
    }
    if grid.axes.len() != dim {
        return Err(Error::invalid("grid dimension does not match the state dimension"));
    }
    if grid.control_nodes < 2 {
        return Err(Error::invalid("control grid needs at least two nodes"));
    }
    let range = match (&grid.control_range, dp.control_box().is_bounded()) {
        (Some(r), _) => r.clone(),
        (None, true) => dp.control_box().clone(),
        (None, false) => {
            return Err(Error::invalid(
                "control box is unbounded; the grid oracle needs an explicit control range",
            ))
        }
    };
    if range.dim() != dp.dim_u() || !range.is_bounded() {
        return Err(Error::invalid("control range must be a bounded box of the control dimension"));
    }
    let axes = grid.axes.clone();
    let nodes = grid.node_count();
    let steps = dp.steps();
    let dim_u = dp.dim_u();
    let noise_dim = dp.diffusion(0, dp.x0()).ncols();
    let rule = GaussHermite::new(grid.gh_nodes)?.tensor(noise_dim);
    let candidates = control_candidates(&range, grid.control_nodes);
    let du = if dim_u == 1 {
        (range.upper()[0] - range.lower()[0]) / (grid.control_nodes - 1) as f64
    } else {
        0.0
    };

    let mut values = vec![Vec::new(); steps + 1];
    values[steps] = (0..nodes)
        .map(|n| dp.terminal_cost(&node_state(&axes, n)))
        .collect();
    let mut controls = vec![Vec::new(); steps];
    let mut escapes = vec![0u64; steps];

    for i in (0..steps).rev() {
        let next = &values[i + 1];
        let swept: Vec<(f64, DVector<f64>, u64)> = (0..nodes)
            .into_par_iter()
            .map(|n| {
                let x = node_state(&axes, n);
                let sigma = dp.diffusion(i, &x);
                let noise: Vec<DVector<f64>> = rule
                    .iter()
                    .map(|(z, _)| &sigma * DVector::from_column_slice(z))
                    .collect();
                let mut probe = vec![0.0; dim];
                let mut q_value = |u: &DVector<f64>, count: &mut u64| -> f64 {
                    let mean = &x + dp.drift(i, &x, u);
                    let mut acc = 0.0;
                    for ((_, w), e) in rule.iter().zip(&noise) {
                        for j in 0..dim {
                            probe[j] = mean[j] + e[j];
                        }
                        if axes
                            .iter()
                            .zip(&probe)
                            .any(|(ax, &p)| !ax.contains(p, grid.escape_margin))
                        {
                            *count += 1;
                        }
                        acc += w * interpolate(&axes, next, &probe);
                    }
                    dp.running_cost(i, &x, u) + acc
                };
                let mut scratch = 0;
                let mut best = (f64::INFINITY, 0);
                for (c, u) in candidates.iter().enumerate() {
                    let v = q_value(u, &mut scratch);
                    if v < best.0 {
                        best = (v, c);
                    }
                }
                let mut u_best = candidates[best.1].clone();
                let mut v_best = best.0;
                if grid.refine_control && dim_u == 1 {
                    let lo = (u_best[0] - du).max(range.lower()[0]);
                    let hi = (u_best[0] + du).min(range.upper()[0]);
                    let (u, v) = golden_min(
                        |s| q_value(&DVector::from_element(1, s), &mut scratch),
                        lo,
                        hi,
                    );
                    if v < v_best {
                        v_best = v;
                        u_best = DVector::from_element(1, u);
                    }
                }
                let mut count = 0;
                q_value(&u_best, &mut count);
                (v_best, u_best, count)
            })
            .collect();
        let mut table = Vec::with_capacity(nodes * dim_u);
        let mut vals = Vec::with_capacity(nodes);
        for (v, u, count) in swept {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("grid value at step {i}")));
            }
            vals.push(v);
            table.extend(u.iter());
            escapes[i] += count;
        }
        values[i] = vals;
        controls[i] = table;
    }
    Ok(GridTruth {
        axes,
        dim_u,
        values,
        controls,
        escapes,
        control_box: dp.control_box().clone(),
    })
}
