//! Continuous stochastic control problems and their Euler-Maruyama
//! discretizations.
//!
//! A [`ContinuousProblem`] bundles drift `f(t,x,u)`, diffusion `σ(t,x)`,
//! running cost `ℓ(t,x,u)`, terminal cost `g(x)` and a box of admissible
//! controls. [`discretize`] turns it into a [`DiscreteProblem`] with
//! increments `F_i = f·dt`, `Σ_i = σ·√dt` and stage costs `L_i = ℓ·dt`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type ControlMatrixFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Per-coordinate closed intervals of admissible controls. Bounds may be
/// infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid("control box bounds differ in length"));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::invalid(format!(
                    "control box interval {j} is empty: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower
            .iter()
            .chain(&self.upper)
            .all(|b| b.is_finite())
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            u.iter()
                .enumerate()
                .map(|(j, &v)| v.clamp(self.lower[j], self.upper[j])),
        )
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.iter()
            .enumerate()
            .all(|(j, &v)| v >= self.lower[j] && v <= self.upper[j])
    }
}

/// Declares that drift is affine and running cost is quadratic plus L1 in the
/// control:
///
/// `f(t,x,u) = f(t,x,0) + B(t,x) u`,
/// `ℓ(t,x,u) = ℓ(t,x,0) + uᵀ R u + λ ‖u‖₁`.
///
/// Policy improvement uses this to solve for the control in closed form.
#[derive(Clone)]
pub struct ControlAffine {
    pub control_matrix: ControlMatrixFn,
    pub control_cost: DMatrix<f64>,
    pub l1_weight: f64,
}

impl fmt::Debug for ControlAffine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffine")
            .field("control_cost", &self.control_cost)
            .field("l1_weight", &self.l1_weight)
            .finish_non_exhaustive()
    }
}

/// Continuous-time linear-quadratic data:
/// `dX = (A X + B u) dt + σ dW`, `ℓ = xᵀQx + uᵀRu`, `g = xᵀGx`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearQuadratic {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Euler-discretized linear-quadratic matrices for a given step length.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteLinearQuadratic {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl LinearQuadratic {
    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        let shapes = [
            ("A", self.a.shape(), (n, n)),
            ("B", self.b.shape(), (n, m)),
            ("Q", self.q.shape(), (n, n)),
            ("R", self.r.shape(), (m, m)),
            ("G", self.g.shape(), (n, n)),
            ("sigma", self.sigma.shape(), (n, n)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::invalid(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        check_psd("Q", &self.q, false)?;
        check_psd("G", &self.g, false)?;
        check_psd("R", &self.r, true)?;
        Ok(())
    }

    pub fn discretize(&self, dt: f64) -> DiscreteLinearQuadratic {
        let n = self.a.nrows();
        DiscreteLinearQuadratic {
            a: DMatrix::identity(n, n) + &self.a * dt,
            b: &self.b * dt,
            q: &self.q * dt,
            r: &self.r * dt,
            g: self.g.clone(),
            sigma: &self.sigma * dt.sqrt(),
        }
    }
}

fn check_psd(name: &str, m: &DMatrix<f64>, strict: bool) -> Result<()> {
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(1.0);
    if asym > 1e-12 * scale {
        return Err(Error::invalid(format!("{name} is not symmetric")));
    }
    let eig = m.clone().symmetric_eigenvalues();
    let min = eig.min();
    let ok = if strict { min > 0.0 } else { min >= -1e-12 * scale };
    if !ok {
        let kind = if strict { "positive definite" } else { "positive semidefinite" };
        return Err(Error::invalid(format!(
            "{name} is not {kind} (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

#[derive(Clone)]
pub struct ContinuousProblem {
    pub name: String,
    pub dim_x: usize,
    pub dim_u: usize,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub running_cost: RunningCostFn,
    pub terminal_cost: TerminalCostFn,
    pub control_box: ControlBox,
    pub control_affine: Option<ControlAffine>,
    pub linear_quadratic: Option<LinearQuadratic>,
}

impl fmt::Debug for ContinuousProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousProblem")
            .field("name", &self.name)
            .field("dim_x", &self.dim_x)
            .field("dim_u", &self.dim_u)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("control_box", &self.control_box)
            .finish_non_exhaustive()
    }
}

impl ContinuousProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        horizon: f64,
        x0: DVector<f64>,
        drift: DriftFn,
        diffusion: DiffusionFn,
        running_cost: RunningCostFn,
        terminal_cost: TerminalCostFn,
        control_box: ControlBox,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if x0.is_empty() || control_box.dim() == 0 {
            return Err(Error::invalid("state and control dimensions must be positive"));
        }
        Ok(Self {
            name: name.into(),
            dim_x: x0.len(),
            dim_u: control_box.dim(),
            horizon,
            x0,
            drift,
            diffusion,
            running_cost,
            terminal_cost,
            control_box,
            control_affine: None,
            linear_quadratic: None,
        })
    }

    pub fn with_control_affine(mut self, affine: ControlAffine) -> Result<Self> {
        let r = &affine.control_cost;
        if r.shape() != (self.dim_u, self.dim_u) {
            return Err(Error::invalid("control cost matrix has wrong shape"));
        }
        if affine.l1_weight < 0.0 {
            return Err(Error::invalid("L1 weight must be nonnegative"));
        }
        self.control_affine = Some(affine);
        Ok(self)
    }

    /// Linear-quadratic problem `dX = (AX + Bu)dt + σdW` with quadratic costs.
    pub fn linear_quadratic(
        name: impl Into<String>,
        lq: LinearQuadratic,
        x0: DVector<f64>,
        horizon: f64,
        control_box: ControlBox,
    ) -> Result<Self> {
        lq.validate()?;
        if x0.len() != lq.a.nrows() || control_box.dim() != lq.b.ncols() {
            return Err(Error::invalid("x0 or control box does not match the LQ dimensions"));
        }
        let (a, b, q, r, g, s) = (
            lq.a.clone(),
            lq.b.clone(),
            lq.q.clone(),
            lq.r.clone(),
            lq.g.clone(),
            lq.sigma.clone(),
        );
        let b_ctrl = lq.b.clone();
        let r_ctrl = lq.r.clone();
        let problem = Self::new(
            name,
            horizon,
            x0,
            Arc::new(move |_t, x, u| &a * x + &b * u),
            Arc::new(move |_t, _x| s.clone()),
            Arc::new(move |_t, x, u| quad_form(&q, x) + quad_form(&r, u)),
            Arc::new(move |x| quad_form(&g, x)),
            control_box,
        )?
        .with_control_affine(ControlAffine {
            control_matrix: Arc::new(move |_t, _x| b_ctrl.clone()),
            control_cost: r_ctrl,
            l1_weight: 0.0,
        })?;
        Ok(Self {
            linear_quadratic: Some(lq),
            ..problem
        })
    }

    pub fn f(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.drift)(t, x, u)
    }

    pub fn sigma(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.diffusion)(t, x)
    }

    pub fn ell(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (self.running_cost)(t, x, u)
    }

    pub fn g(&self, x: &DVector<f64>) -> f64 {
        (self.terminal_cost)(x)
    }
}

pub(crate) fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for p in 0..x.len() {
        for q in 0..x.len() {
            acc += m[(p, q)] * x[p] * x[q];
        }
    }
    acc
}

/// Time-discretized problem on the uniform grid `t_i = i·dt`, `i = 0..=N`.
#[derive(Clone, Debug)]
pub struct DiscreteProblem {
    problem: Arc<ContinuousProblem>,
    steps: usize,
    dt: f64,
    sqrt_dt: f64,
}

pub fn discretize(cp: &ContinuousProblem, steps: usize) -> Result<DiscreteProblem> {
    if steps == 0 {
        return Err(Error::invalid("step count must be at least 1"));
    }
    let dt = cp.horizon / steps as f64;
    Ok(DiscreteProblem {
        problem: Arc::new(cp.clone()),
        steps,
        dt,
        sqrt_dt: dt.sqrt(),
    })
}

impl DiscreteProblem {
    pub fn continuous(&self) -> &ContinuousProblem {
        &self.problem
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn dim_x(&self) -> usize {
        self.problem.dim_x
    }

    pub fn dim_u(&self) -> usize {
        self.problem.dim_u
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.problem.x0
    }

    pub fn control_box(&self) -> &ControlBox {
        &self.problem.control_box
    }

    /// `F_i(x,u) = f(t_i,x,u)·dt`.
    pub fn drift(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.problem.f(self.time(i), x, u) * self.dt
    }

    /// `Σ_i(x) = σ(t_i,x)·√dt`.
    pub fn diffusion(&self, i: usize, x: &DVector<f64>) -> DMatrix<f64> {
        self.problem.sigma(self.time(i), x) * self.sqrt_dt
    }

    /// `L_i(x,u) = ℓ(t_i,x,u)·dt`.
    pub fn running_cost(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.problem.ell(self.time(i), x, u) * self.dt
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        self.problem.g(x)
    }

    /// Discrete control matrix `B(t_i,x)·dt`, when the problem is control-affine.
    pub fn control_matrix(&self, i: usize, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.problem
            .control_affine
            .as_ref()
            .map(|a| (a.control_matrix)(self.time(i), x) * self.dt)
    }

    pub fn control_affine(&self) -> Option<&ControlAffine> {
        self.problem.control_affine.as_ref()
    }

    pub fn linear_quadratic(&self) -> Option<DiscreteLinearQuadratic> {
        self.problem
            .linear_quadratic
            .as_ref()
            .map(|lq| lq.discretize(self.dt))
    }

    /// Closed-loop drift increment `F_i(x, μ_i(x))`.
    pub fn policy_drift(&self, i: usize, x: &DVector<f64>, mu: &dyn Policy) -> DVector<f64> {
        let u = mu.control(i, x);
        self.drift(i, x, &u)
    }
}

/// A feedback policy `μ_i(x)`.
pub trait Policy: Send + Sync {
    fn control(&self, step: usize, x: &DVector<f64>) -> DVector<f64>;
}

impl<F> Policy for F
where
    F: Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn control(&self, step: usize, x: &DVector<f64>) -> DVector<f64> {
        self(step, x)
    }
}

/// `u = -gain_i x`.
#[derive(Clone, Debug)]
pub struct LinearFeedback {
    pub gains: Vec<DMatrix<f64>>,
}

impl Policy for LinearFeedback {
    fn control(&self, step: usize, x: &DVector<f64>) -> DVector<f64> {
        let i = step.min(self.gains.len() - 1);
        -(&self.gains[i] * x)
    }
}

/// Clamps another policy's output into a control box.
pub struct Clipped<P> {
    pub inner: P,
    pub bounds: ControlBox,
}

impl<P: Policy> Policy for Clipped<P> {
    fn control(&self, step: usize, x: &DVector<f64>) -> DVector<f64> {
        self.bounds.clamp(&self.inner.control(step, x))
    }
}

/// Settings for the scalar nonlinear benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearParams {
    pub u_max: f64,
}

impl Default for NonlinearParams {
    fn default() -> Self {
        Self { u_max: 20.0 }
    }
}

/// Scalar nonlinear benchmark:
/// `dX = (0.1(X−3)² + 0.2u) dt + 0.8 dW`, `ℓ = 12|x−6| + 0.4u²`, `g = 25x²`,
/// `T = 10`, `x0 = 7`.
pub fn build_nonlinear_1d(params: &NonlinearParams) -> Result<ContinuousProblem> {
    if !(params.u_max > 0.0) {
        return Err(Error::invalid("u_max must be positive"));
    }
    ContinuousProblem::new(
        "nonlinear1d",
        10.0,
        DVector::from_element(1, 7.0),
        Arc::new(|_t, x, u| {
            let d = x[0] - 3.0;
            DVector::from_element(1, 0.1 * d * d + 0.2 * u[0])
        }),
        Arc::new(|_t, _x| DMatrix::from_element(1, 1, 0.8)),
        Arc::new(|_t, x, u| 12.0 * (x[0] - 6.0).abs() + 0.4 * u[0] * u[0]),
        Arc::new(|x| 25.0 * x[0] * x[0]),
        ControlBox::symmetric(1, params.u_max)?,
    )?
    .with_control_affine(ControlAffine {
        control_matrix: Arc::new(|_t, _x| DMatrix::from_element(1, 1, 0.2)),
        control_cost: DMatrix::from_element(1, 1, 0.4),
        l1_weight: 0.0,
    })
}

/// Parameters of the linearized cart-pole.
///
/// `a` holds `a₁..a₆` and `b` holds `b₁, b₂` in the drift
///
/// ```text
/// A = [0 1  0  0 ; 0 a1 a2 a3 ; 0 0 0 1 ; 0 a4 a5 a6],  B = [0 ; b1 ; 0 ; b2]
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct LqrParams {
    pub a: [f64; 6],
    pub b: [f64; 2],
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub horizon: f64,
    /// Zero out the off-diagonal diffusion entry at row 2, column 4.
    pub sigma_patch: bool,
}

impl LqrParams {
    /// Frictionless cart-pole linearized about the upright equilibrium.
    pub fn from_physics(cart_mass: f64, pole_mass: f64, half_length: f64, gravity: f64) -> Self {
        let total = cart_mass + pole_mass;
        let denom = half_length * (4.0 / 3.0 - pole_mass / total);
        let a5 = gravity / denom;
        let b2 = -1.0 / (total * denom);
        let a2 = -pole_mass * half_length * a5 / total;
        let b1 = 1.0 / total - pole_mass * half_length * b2 / total;
        Self {
            a: [0.0, a2, 0.0, 0.0, a5, 0.0],
            b: [b1, b2],
            q: DMatrix::identity(4, 4),
            r: DMatrix::identity(1, 1),
            g: DMatrix::identity(4, 4),
            horizon: 5.0,
            sigma_patch: false,
        }
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        let a = &self.a;
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0, //
                0.0, a[0], a[1], a[2], //
                0.0, 0.0, 0.0, 1.0, //
                0.0, a[3], a[4], a[5],
            ],
        )
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 1, &[0.0, self.b[0], 0.0, self.b[1]])
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let coupling = if self.sigma_patch { 0.0 } else { 1.0 };
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.01, 0.0, 0.0, 0.0, //
                0.0, 0.1, 0.0, coupling, //
                0.0, 0.0, 0.01, 0.0, //
                0.0, 0.0, 0.0, 0.1,
            ],
        )
    }
}

impl Default for LqrParams {
    fn default() -> Self {
        Self::from_physics(1.0, 0.1, 0.5, 9.81)
    }
}

pub fn cartpole_x0() -> DVector<f64> {
    DVector::from_column_slice(&[0.0, 0.0, PI / 9.0, 0.0])
}

/// Linearized four-state cart-pole with additive noise and quadratic cost.
pub fn build_cartpole_lqr(params: &LqrParams) -> Result<ContinuousProblem> {
    let lq = LinearQuadratic {
        a: params.a_matrix(),
        b: params.b_matrix(),
        q: params.q.clone(),
        r: params.r.clone(),
        g: params.g.clone(),
        sigma: params.sigma_matrix(),
    };
    ContinuousProblem::linear_quadratic(
        "cartpole_lqr",
        lq,
        cartpole_x0(),
        params.horizon,
        ControlBox::unbounded(1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn brownian_1d(horizon: f64) -> ContinuousProblem {
        ContinuousProblem::new(
            "bm",
            horizon,
            v1(0.0),
            Arc::new(|_t, _x, _u| DVector::zeros(1)),
            Arc::new(|_t, _x| DMatrix::identity(1, 1)),
            Arc::new(|_t, _x, u| u[0] * u[0]),
            Arc::new(|x| x[0]),
            ControlBox::symmetric(1, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn discretize_scales_increments() {
        let dp = discretize(&brownian_1d(1.0), 4).unwrap();
        assert_eq!(dp.dt(), 0.25);
        assert_eq!(dp.diffusion(2, &v1(3.0))[(0, 0)], 0.5);
    }

    #[test]
    fn discretize_rejects_zero_steps() {
        assert!(matches!(
            discretize(&brownian_1d(1.0), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn stage_cost_is_dt_scaled() {
        let dp = discretize(&brownian_1d(1.0), 10).unwrap();
        let l = dp.running_cost(0, &v1(0.0), &v1(3.0));
        assert_relative_eq!(l, 0.1 * 9.0, max_relative = 1e-15);
    }

    #[test]
    fn nonlinear_benchmark_values() {
        let cp = build_nonlinear_1d(&NonlinearParams::default()).unwrap();
        assert_relative_eq!(cp.f(0.0, &v1(7.0), &v1(0.0))[0], 1.6, max_relative = 1e-15);
        assert_eq!(cp.ell(0.0, &v1(6.0), &v1(0.0)), 0.0);
        assert_eq!(cp.g(&v1(2.0)), 100.0);
        assert_eq!(cp.x0[0], 7.0);
        let dp = discretize(&cp, 200).unwrap();
        assert_relative_eq!(dp.dt(), 0.05, max_relative = 1e-15);
    }

    #[test]
    fn cartpole_layout() {
        let p = LqrParams::default();
        let s = p.sigma_matrix();
        assert_eq!(s[(0, 0)], 0.01);
        assert_eq!(s[(1, 3)], 1.0);
        let a = p.a_matrix();
        assert_eq!(a.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 0.0]);
        let x0 = cartpole_x0();
        assert_eq!(x0.as_slice(), &[0.0, 0.0, PI / 9.0, 0.0]);
        let patched = LqrParams {
            sigma_patch: true,
            ..LqrParams::default()
        };
        assert_eq!(patched.sigma_matrix()[(1, 3)], 0.0);
        let cp = build_cartpole_lqr(&p).unwrap();
        assert_eq!((cp.dim_x, cp.dim_u), (4, 1));
    }

    #[test]
    fn cartpole_rejects_indefinite_costs() {
        let p = LqrParams {
            r: DMatrix::from_element(1, 1, 0.0),
            ..LqrParams::default()
        };
        assert!(build_cartpole_lqr(&p).is_err());
        let mut p = LqrParams::default();
        p.q[(0, 0)] = -1.0;
        assert!(build_cartpole_lqr(&p).is_err());
        let mut p = LqrParams::default();
        p.g[(2, 2)] = -0.5;
        assert!(build_cartpole_lqr(&p).is_err());
    }

    #[test]
    fn empty_control_interval_rejected() {
        assert!(ControlBox::new(vec![1.0], vec![0.0]).is_err());
        let b = ControlBox::symmetric(1, 2.0).unwrap();
        assert_eq!(b.clamp(&v1(5.0))[0], 2.0);
    }

    #[test]
    fn drift_over_dt_recovers_continuous_drift() {
        let cp = build_nonlinear_1d(&NonlinearParams::default()).unwrap();
        let dp = discretize(&cp, 200).unwrap();
        for (i, x, u) in [(0, -3.0, 1.0), (17, 4.2, -19.0), (199, 11.0, 0.5)] {
            let lhs = dp.drift(i, &v1(x), &v1(u))[0] / dp.dt();
            let rhs = cp.f(dp.time(i), &v1(x), &v1(u))[0];
            assert_relative_eq!(lhs, rhs, max_relative = 1e-14);
        }
        let fine = discretize(&cp, 400).unwrap();
        assert_eq!(dp.dt(), 2.0 * fine.dt());
    }

    #[test]
    fn nonlinear_running_cost_nonnegative() {
        let cp = build_nonlinear_1d(&NonlinearParams::default()).unwrap();
        for k in 0..200 {
            let x = -20.0 + 0.2 * k as f64;
            let u = -20.0 + 0.2 * ((k * 7) % 200) as f64;
            assert!(cp.ell(0.0, &v1(x), &v1(u)) >= 0.0);
        }
    }
}
