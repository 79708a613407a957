//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Keys:
//!
//! | key                        | meaning                                            | default                       |
//! |----------------------------|----------------------------------------------------|-------------------------------|
//! | `problem.name`             | `nonlinear1d` or `cartpole_lqr`                    | required                      |
//! | `problem.steps`            | number of timesteps `N`                            | 200 / 100                     |
//! | `problem.horizon`          | horizon `T`                                        | 10 / 5                        |
//! | `problem.u_max`            | control bound of the scalar problem                | 20                            |
//! | `problem.sigma_patch`      | drop the cart-pole diffusion coupling term         | false                         |
//! | `problem.lqr_a`            | cart-pole constants `a₁..a₆`                       | linearized cart-pole          |
//! | `problem.lqr_b`            | cart-pole constants `b₁, b₂`                       | linearized cart-pole          |
//! | `drift.kind`               | `optimal`, `suboptimal` or `custom`                | `optimal`                     |
//! | `drift.gains`              | custom gains (see below)                           | none                          |
//! | `drift.scale_dt`           | scalar problem: multiply the linear drift by `dt`  | true                          |
//! | `drift.cap`                | abort sampling when `‖D‖` exceeds this (`inf` ok)  | 10 / inf                      |
//! | `sweep.estimators`         | estimator names                                    | all four                      |
//! | `sweep.degrees`            | total polynomial degrees                           | 1..6 / 2                      |
//! | `sweep.samples`            | trajectory counts                                  | 16,64,256,1024,4096 / 1024    |
//! | `sweep.trials`             | trials per cell                                    | 20 / 1                        |
//! | `seed`                     | master seed (`FBSDE_SEED` overrides)               | 0                             |
//! | `fit.ridge`                | Tikhonov weight of the regression                  | 1e-10 / 0                     |
//! | `oracle.grid_nodes`        | state nodes per axis of the grid oracle            | 2001                          |
//! | `oracle.control_nodes`     | control nodes of the grid oracle                   | 201                           |
//! | `oracle.gh_nodes`          | Gauss–Hermite nodes                                | 21                            |
//! | `oracle.widen`             | relative widening of the grid over the regions     | 0.5                           |
//! | `oracle.coarse_range`      | `lo,hi` of the first-pass grid                     | -10,20                        |
//! | `oracle.coarse_nodes`      | nodes of the first-pass grid                       | 301                           |
//! | `oracle.reference_samples` | paths of the optimal reference batch               | 4096                          |
//! | `metrics.dx`               | RAE grid spacing                                   | 0.01 (1-D)                    |
//! | `metrics.points`           | RAE grid points per axis                           | 9 (multi-D)                   |
//! | `policy.iterations`        | policy-iteration rounds after the sweep            | 0                             |
//! | `diagnose.step`            | timestep examined by `diagnose`                    | `N/2`                         |
//! | `diagnose.resamples`       | noise redraws per pinned cell                      | 1000                          |
//! | `diagnose.cells`           | pinned cells                                       | 32                            |
//! | `output.dir`               | output directory                                   | `out`                         |
//! | `output.runtime`           | record wall-clock `runtime_ms` (else 0)            | true                          |
//!
//! Where two defaults are given, the first applies to `nonlinear1d` and the
//! second to `cartpole_lqr`.
//!
//! Drifts: `optimal` samples under the reference (optimal) policy itself.
//! For `nonlinear1d`, `suboptimal` is `K_i = −0.2·X_i·dt` and `custom` takes
//! one gain `c` for `K_i = c·X_i·dt` (without `dt` when `drift.scale_dt` is
//! false). For `cartpole_lqr`, `suboptimal` is `K_i = (A + B[0 0 k₁ k₂])X_i·dt`
//! with `k₁ = 20`, `k₂ = 3`, and `custom` supplies `k₁,k₂`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::metrics::Resolution;
use crate::problems::LqrParams;

pub const SEED_ENV: &str = "FBSDE_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Nonlinear1d,
    CartpoleLqr,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Nonlinear1d => "nonlinear1d",
            ProblemKind::CartpoleLqr => "cartpole_lqr",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonlinear1d" => Ok(ProblemKind::Nonlinear1d),
            "cartpole_lqr" | "lqr" => Ok(ProblemKind::CartpoleLqr),
            other => Err(Error::invalid(format!("unknown problem `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Optimal,
    Suboptimal,
    Custom(Vec<f64>),
}

impl DriftKind {
    pub fn name(&self) -> &'static str {
        match self {
            DriftKind::Optimal => "optimal",
            DriftKind::Suboptimal => "suboptimal",
            DriftKind::Custom(_) => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSettings {
    pub grid_nodes: usize,
    pub control_nodes: usize,
    pub gh_nodes: usize,
    pub widen: f64,
    pub coarse_range: (f64, f64),
    pub coarse_nodes: usize,
    pub reference_samples: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            grid_nodes: 2001,
            control_nodes: 201,
            gh_nodes: 21,
            widen: 0.5,
            coarse_range: (-10.0, 20.0),
            coarse_nodes: 301,
            reference_samples: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnoseSettings {
    pub step: Option<usize>,
    pub resamples: usize,
    pub cells: usize,
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        Self {
            step: None,
            resamples: 1000,
            cells: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub steps: usize,
    pub horizon: f64,
    pub u_max: f64,
    pub sigma_patch: bool,
    /// Cart-pole linearization constants `a₁..a₆` and `b₁, b₂`.
    pub lqr_a: [f64; 6],
    pub lqr_b: [f64; 2],
    pub drift: DriftKind,
    pub drift_scale_dt: bool,
    #[serde(serialize_with = "float_or_string")]
    pub drift_cap: f64,
    pub estimators: Vec<EstimatorKind>,
    pub degrees: Vec<usize>,
    pub samples: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub ridge: f64,
    pub oracle: OracleSettings,
    pub resolution: Resolution,
    pub policy_iterations: usize,
    pub diagnose: DiagnoseSettings,
    pub output_dir: PathBuf,
    pub record_runtime: bool,
}

impl ExperimentConfig {
    /// Defaults for a problem before any overrides.
    pub fn defaults(problem: ProblemKind) -> Self {
        let lqr = LqrParams::default();
        let common = |steps, horizon, degrees, samples, trials, ridge, cap, dim| Self {
            problem,
            steps,
            horizon,
            u_max: 20.0,
            sigma_patch: false,
            lqr_a: lqr.a,
            lqr_b: lqr.b,
            drift: DriftKind::Optimal,
            drift_scale_dt: true,
            drift_cap: cap,
            estimators: EstimatorKind::ALL.to_vec(),
            degrees,
            samples,
            trials,
            seed: 0,
            ridge,
            oracle: OracleSettings::default(),
            resolution: Resolution::default_for(dim),
            policy_iterations: 0,
            diagnose: DiagnoseSettings::default(),
            output_dir: PathBuf::from("out"),
            record_runtime: true,
        };
        match problem {
            ProblemKind::Nonlinear1d => common(
                200,
                10.0,
                (1..=6).collect(),
                vec![16, 64, 256, 1024, 4096],
                20,
                1e-10,
                10.0,
                1,
            ),
            ProblemKind::CartpoleLqr => {
                common(100, 5.0, vec![2], vec![1024], 1, 0.0, f64::INFINITY, 4)
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    /// `FBSDE_SEED`, if set, replaces the configured seed.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::Config {
                line: 0,
                message: format!("{SEED_ENV}=`{v}` is not an unsigned integer"),
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (n + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config {
                    line: n + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        let (line, name) = entries.remove("problem.name").ok_or(Error::Config {
            line: 0,
            message: "missing required key `problem.name`".into(),
        })?;
        let problem: ProblemKind = name.parse().map_err(|e: Error| Error::Config {
            line,
            message: e.to_string(),
        })?;
        let mut cfg = Self::defaults(problem);
        let mut gains = None;
        let mut dx = None;
        let mut points = None;
        for (key, (line, value)) in entries {
            let bad = |message: String| Error::Config { line, message };
            let v = value.as_str();
            match key.as_str() {
                "problem.steps" => cfg.steps = scalar(v, line)?,
                "problem.horizon" => cfg.horizon = scalar(v, line)?,
                "problem.u_max" => cfg.u_max = scalar(v, line)?,
                "problem.sigma_patch" => cfg.sigma_patch = scalar(v, line)?,
                "problem.lqr_a" => {
                    cfg.lqr_a = list::<f64>(v, line)?
                        .try_into()
                        .map_err(|_| bad("`problem.lqr_a` needs six values".into()))?
                }
                "problem.lqr_b" => {
                    cfg.lqr_b = list::<f64>(v, line)?
                        .try_into()
                        .map_err(|_| bad("`problem.lqr_b` needs two values".into()))?
                }
                "drift.kind" => {
                    cfg.drift = match v {
                        "optimal" => DriftKind::Optimal,
                        "suboptimal" => DriftKind::Suboptimal,
                        "custom" => DriftKind::Custom(Vec::new()),
                        other => return Err(bad(format!("unknown drift `{other}`"))),
                    }
                }
                "drift.gains" => gains = Some(list::<f64>(v, line)?),
                "drift.scale_dt" => cfg.drift_scale_dt = scalar(v, line)?,
                "drift.cap" => cfg.drift_cap = scalar(v, line)?,
                "sweep.estimators" => cfg.estimators = list(v, line)?,
                "sweep.degrees" => cfg.degrees = list(v, line)?,
                "sweep.samples" => cfg.samples = list(v, line)?,
                "sweep.trials" => cfg.trials = scalar(v, line)?,
                "seed" => cfg.seed = scalar(v, line)?,
                "fit.ridge" => cfg.ridge = scalar(v, line)?,
                "oracle.grid_nodes" => cfg.oracle.grid_nodes = scalar(v, line)?,
                "oracle.control_nodes" => cfg.oracle.control_nodes = scalar(v, line)?,
                "oracle.gh_nodes" => cfg.oracle.gh_nodes = scalar(v, line)?,
                "oracle.widen" => cfg.oracle.widen = scalar(v, line)?,
                "oracle.coarse_range" => {
                    let r: Vec<f64> = list(v, line)?;
                    if r.len() != 2 {
                        return Err(bad("`oracle.coarse_range` needs exactly two values".into()));
                    }
                    cfg.oracle.coarse_range = (r[0], r[1]);
                }
                "oracle.coarse_nodes" => cfg.oracle.coarse_nodes = scalar(v, line)?,
                "oracle.reference_samples" => cfg.oracle.reference_samples = scalar(v, line)?,
                "metrics.dx" => dx = Some(scalar(v, line)?),
                "metrics.points" => points = Some(scalar(v, line)?),
                "policy.iterations" => cfg.policy_iterations = scalar(v, line)?,
                "diagnose.step" => cfg.diagnose.step = Some(scalar(v, line)?),
                "diagnose.resamples" => cfg.diagnose.resamples = scalar(v, line)?,
                "diagnose.cells" => cfg.diagnose.cells = scalar(v, line)?,
                "output.dir" => cfg.output_dir = PathBuf::from(v),
                "output.runtime" => cfg.record_runtime = scalar(v, line)?,
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        match (&mut cfg.drift, gains) {
            (DriftKind::Custom(g), Some(values)) => *g = values,
            (DriftKind::Custom(_), None) => {
                return Err(Error::Config {
                    line: 0,
                    message: "`drift.kind = custom` needs `drift.gains`".into(),
                })
            }
            (_, Some(_)) => {
                return Err(Error::Config {
                    line: 0,
                    message: "`drift.gains` is only used with `drift.kind = custom`".into(),
                })
            }
            _ => {}
        }
        match (dx, points) {
            (Some(_), Some(_)) => {
                return Err(Error::Config {
                    line: 0,
                    message: "set at most one of `metrics.dx` and `metrics.points`".into(),
                })
            }
            (Some(d), None) => cfg.resolution = Resolution::Spacing(d),
            (None, Some(p)) => cfg.resolution = Resolution::Points(p),
            (None, None) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| {
            Err(Error::Config {
                line: 0,
                message: message.into(),
            })
        };
        if self.estimators.is_empty() || self.degrees.is_empty() || self.samples.is_empty() {
            return fail("every sweep axis needs at least one value");
        }
        if self.trials == 0 {
            return fail("`sweep.trials` must be at least 1");
        }
        if self.steps == 0 || !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return fail("`problem.steps` and `problem.horizon` must be positive");
        }
        if self.samples.contains(&0) || self.oracle.reference_samples == 0 {
            return fail("sample counts must be positive");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return fail("`fit.ridge` must be finite and nonnegative");
        }
        if !(self.drift_cap > 0.0) {
            return fail("`drift.cap` must be positive");
        }
        if let DriftKind::Custom(g) = &self.drift {
            let want = match self.problem {
                ProblemKind::Nonlinear1d => 1,
                ProblemKind::CartpoleLqr => 2,
            };
            if g.len() != want {
                return fail(&format!(
                    "`drift.gains` for {} needs {want} value(s)",
                    self.problem
                ));
            }
        }
        match self.resolution {
            Resolution::Spacing(d) if !(d > 0.0) => return fail("`metrics.dx` must be positive"),
            Resolution::Points(0) => return fail("`metrics.points` must be positive"),
            _ => {}
        }
        let o = &self.oracle;
        if o.grid_nodes < 2 || o.control_nodes < 2 || o.coarse_nodes < 2 || o.gh_nodes == 0 {
            return fail("oracle grids need at least two nodes");
        }
        if !(o.coarse_range.0 < o.coarse_range.1) || !(o.widen >= 0.0) {
            return fail("invalid oracle range or widening");
        }
        let mut seen = std::collections::HashSet::new();
        if !self.estimators.iter().all(|e| seen.insert(*e)) {
            return fail("`sweep.estimators` has duplicates");
        }
        let mut seen = std::collections::HashSet::new();
        if !self.degrees.iter().all(|d| seen.insert(*d)) {
            return fail("`sweep.degrees` has duplicates");
        }
        let mut seen = std::collections::HashSet::new();
        if !self.samples.iter().all(|s| seen.insert(*s)) {
            return fail("`sweep.samples` has duplicates");
        }
        Ok(())
    }
}

/// JSON has no infinity; write non-finite values as strings (`"inf"`).
fn float_or_string<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

fn scalar<T: FromStr>(v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("cannot parse `{v}`"),
    })
}

fn list<T: FromStr>(v: &str, line: usize) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| scalar(s, line))
        .collect()
}
