//! Experiment orchestration: oracle construction, the estimator sweep,
//! ground-truth export, diagnostics and policy iteration.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::backward::backward_pass;
use crate::config::{DriftKind, ExperimentConfig, ProblemKind};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::metrics::{
    bias_bound_check, estimator_bias_variance, mean_rae, BoundOptions, ConfidenceRegion,
};
use crate::oracles::{grid_bellman, riccati_for, Axis, GridPolicy, GridSpec, GridTruth, GroundTruth, RiccatiTruth};
use crate::policy::{rollout_cost, ImprovedPolicy, ImprovementRule, PolicyOptions};
use crate::problems::{
    build_cartpole_lqr, build_nonlinear_1d, discretize, DiscreteProblem, LqrParams,
    NonlinearParams, Policy,
};
use crate::rng::derive_seed;
use crate::sampling::{sample_forward_with, DriftProcess, SamplingOptions, TrajectoryBatch};
use crate::value_model::BasisSpec;

/// Seed labels, so that every random object of a run has its own stream.
const LABEL_REFERENCE: u64 = 1;
const LABEL_COARSE_REFERENCE: u64 = 2;
const LABEL_CELL: u64 = 3;
const LABEL_DIAGNOSE: u64 = 4;
const LABEL_POLICY: u64 = 5;

/// Gains of the stabilizing but suboptimal cart-pole sampling policy.
pub const CARTPOLE_SUBOPTIMAL_GAINS: [f64; 2] = [20.0, 3.0];
/// Rate of the scalar problem's suboptimal linear drift.
pub const NONLINEAR_SUBOPTIMAL_RATE: f64 = -0.2;

pub fn lqr_params(cfg: &ExperimentConfig) -> LqrParams {
    LqrParams {
        a: cfg.lqr_a,
        b: cfg.lqr_b,
        horizon: cfg.horizon,
        sigma_patch: cfg.sigma_patch,
        ..LqrParams::default()
    }
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<DiscreteProblem> {
    let cp = match cfg.problem {
        ProblemKind::Nonlinear1d => {
            let mut cp = build_nonlinear_1d(&NonlinearParams { u_max: cfg.u_max })?;
            cp.horizon = cfg.horizon;
            cp
        }
        ProblemKind::CartpoleLqr => build_cartpole_lqr(&lqr_params(cfg))?,
    };
    discretize(&cp, cfg.steps)
}

pub enum Truth {
    Grid(Arc<GridTruth>),
    Riccati(Arc<RiccatiTruth>),
}

impl Truth {
    pub fn as_ground_truth(&self) -> &dyn GroundTruth {
        match self {
            Truth::Grid(g) => g.as_ref(),
            Truth::Riccati(r) => r.as_ref(),
        }
    }

    pub fn policy(&self) -> Arc<dyn Policy> {
        match self {
            Truth::Grid(g) => Arc::new(GridPolicy { truth: g.clone() }),
            Truth::Riccati(r) => Arc::new(r.policy()),
        }
    }
}

/// Everything the sweep needs besides the per-cell batches.
pub struct Setup {
    pub dp: DiscreteProblem,
    pub truth: Truth,
    pub policy: Arc<dyn Policy>,
    pub region: ConfidenceRegion,
    pub drift: DriftProcess,
    pub sampling: SamplingOptions,
}

fn reference_batch(
    dp: &DiscreteProblem,
    policy: &dyn Policy,
    cfg: &ExperimentConfig,
    label: u64,
) -> Result<TrajectoryBatch> {
    sample_forward_with(
        dp,
        policy,
        &DriftProcess::OnPolicy,
        cfg.oracle.reference_samples,
        derive_seed(cfg.seed, &[label]),
        &SamplingOptions { drift_cap: f64::INFINITY },
    )
}

/// Grid oracle built in two passes: a coarse grid over a fixed range gives
/// a near-optimal policy whose paths locate the confidence regions; the fine
/// grid then covers their union widened by `oracle.widen`.
pub fn build_grid_truth(dp: &DiscreteProblem, cfg: &ExperimentConfig) -> Result<GridTruth> {
    let o = &cfg.oracle;
    let mut coarse = GridSpec::new(vec![Axis::new(o.coarse_range.0, o.coarse_range.1, o.coarse_nodes)?]);
    coarse.control_nodes = o.control_nodes.min(81);
    coarse.gh_nodes = o.gh_nodes;
    let first = Arc::new(grid_bellman(dp, &coarse)?);
    let batch = reference_batch(dp, &GridPolicy { truth: first }, cfg, LABEL_COARSE_REFERENCE)?;
    let (lo, hi) = ConfidenceRegion::from_batch(&batch, cfg.resolution).hull();
    let mut fine = GridSpec::covering(&lo, &hi, o.widen, o.grid_nodes)?;
    fine.control_nodes = o.control_nodes;
    fine.gh_nodes = o.gh_nodes;
    grid_bellman(dp, &fine)
}

pub fn build_drift(cfg: &ExperimentConfig, dp: &DiscreteProblem) -> DriftProcess {
    let dt = dp.dt();
    match (cfg.problem, &cfg.drift) {
        (_, DriftKind::Optimal) => DriftProcess::OnPolicy,
        (ProblemKind::Nonlinear1d, kind) => {
            let rate = match kind {
                DriftKind::Custom(g) => g[0],
                _ => NONLINEAR_SUBOPTIMAL_RATE,
            };
            let scale = if cfg.drift_scale_dt { dt } else { 1.0 };
            DriftProcess::feedback(move |_i, x| x * (rate * scale))
        }
        (ProblemKind::CartpoleLqr, kind) => {
            let (k1, k2) = match kind {
                DriftKind::Custom(g) => (g[0], g[1]),
                _ => (CARTPOLE_SUBOPTIMAL_GAINS[0], CARTPOLE_SUBOPTIMAL_GAINS[1]),
            };
            let params = lqr_params(cfg);
            let feedback = DMatrix::from_row_slice(1, 4, &[0.0, 0.0, k1, k2]);
            let closed = (params.a_matrix() + params.b_matrix() * feedback) * dt;
            DriftProcess::feedback(move |_i, x| &closed * x)
        }
    }
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let dp = build_problem(cfg)?;
    let truth = match cfg.problem {
        ProblemKind::Nonlinear1d => Truth::Grid(Arc::new(build_grid_truth(&dp, cfg)?)),
        ProblemKind::CartpoleLqr => Truth::Riccati(Arc::new(riccati_for(&dp)?)),
    };
    let policy = truth.policy();
    let reference = reference_batch(&dp, policy.as_ref(), cfg, LABEL_REFERENCE)?;
    let region = ConfidenceRegion::from_batch(&reference, cfg.resolution);
    let drift = build_drift(cfg, &dp);
    Ok(Setup {
        dp,
        truth,
        policy,
        region,
        drift,
        sampling: SamplingOptions {
            drift_cap: cfg.drift_cap,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub problem: String,
    pub drift: String,
    pub estimator: String,
    pub basis_count: usize,
    pub samples: usize,
    pub trial: usize,
    /// `+inf` when the cell diverged numerically.
    pub mean_rae: f64,
    pub runtime_ms: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Cell {
    estimator: EstimatorKind,
    degree: usize,
    samples: usize,
    trial: usize,
}

fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &estimator in &cfg.estimators {
        for &degree in &cfg.degrees {
            for &samples in &cfg.samples {
                for trial in 0..cfg.trials {
                    out.push(Cell {
                        estimator,
                        degree,
                        samples,
                        trial,
                    });
                }
            }
        }
    }
    out
}

/// Seed of the forward batch for `(samples, trial)`; shared by all
/// estimators and degrees so their errors are paired.
pub fn cell_seed(cfg: &ExperimentConfig, samples: usize, trial: usize) -> u64 {
    derive_seed(cfg.seed, &[LABEL_CELL, samples as u64, trial as u64])
}

fn run_cell(setup: &Setup, cfg: &ExperimentConfig, cell: Cell) -> Result<ResultRow> {
    let start = Instant::now();
    let seed = cell_seed(cfg, cell.samples, cell.trial);
    let spec = BasisSpec::new(setup.dp.dim_x(), cell.degree)?;
    let outcome = sample_forward_with(
        &setup.dp,
        setup.policy.as_ref(),
        &setup.drift,
        cell.samples,
        seed,
        &setup.sampling,
    )
    .and_then(|batch| {
        backward_pass(&setup.dp, setup.policy.as_ref(), &batch, cell.estimator, &spec, cfg.ridge)
    })
    .and_then(|m| mean_rae(&m, setup.truth.as_ground_truth(), &setup.region));
    let mean_rae = match outcome {
        Ok(r) if r.is_finite() => r,
        Ok(_) => f64::INFINITY,
        Err(e) if e.is_numerical() => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let runtime_ms = if cfg.record_runtime {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    Ok(ResultRow {
        problem: cfg.problem.name().into(),
        drift: cfg.drift.name().into(),
        estimator: cell.estimator.name().into(),
        basis_count: spec.len(),
        samples: cell.samples,
        trial: cell.trial,
        mean_rae,
        runtime_ms,
        seed,
    })
}

/// Run every sweep cell and return the rows in configuration order.
pub fn run_sweep(setup: &Setup, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cells(cfg)
        .into_par_iter()
        .map(|cell| run_cell(setup, cfg, cell))
        .collect()
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    dim: usize,
    dt: f64,
    oracle: OracleSummary,
    cells: usize,
}

#[derive(Debug, Serialize)]
struct OracleSummary {
    kind: &'static str,
    grid_lower: Option<Vec<f64>>,
    grid_upper: Option<Vec<f64>>,
    grid_nodes: Option<usize>,
    grid_escapes: Option<u64>,
}

fn oracle_summary(truth: &Truth) -> OracleSummary {
    match truth {
        Truth::Grid(g) => OracleSummary {
            kind: "grid_bellman",
            grid_lower: Some(g.axes.iter().map(|a| a.lo).collect()),
            grid_upper: Some(g.axes.iter().map(|a| a.hi).collect()),
            grid_nodes: Some(g.node_count()),
            grid_escapes: Some(g.escapes.iter().sum()),
        },
        Truth::Riccati(_) => OracleSummary {
            kind: "riccati",
            grid_lower: None,
            grid_upper: None,
            grid_nodes: None,
            grid_escapes: None,
        },
    }
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct RunOutput {
    pub results: PathBuf,
    pub manifest: PathBuf,
    pub rows: Vec<ResultRow>,
    pub policy_iteration: Option<PathBuf>,
}

/// Full experiment: oracle, sweep, `results.csv`, `manifest.json`, and the
/// optional policy-iteration log.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let setup = setup(cfg)?;
    let rows = run_sweep(&setup, cfg)?;
    let results = cfg.output_dir.join("results.csv");
    write_results(&rows, &results)?;
    let manifest = cfg.output_dir.join("manifest.json");
    let m = Manifest {
        config: cfg,
        dim: setup.dp.dim_x(),
        dt: setup.dp.dt(),
        oracle: oracle_summary(&setup.truth),
        cells: rows.len(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&manifest)?), &m)?;
    let policy_iteration = if cfg.policy_iterations > 0 {
        let log = policy_iteration(&setup, cfg)?;
        let path = cfg.output_dir.join("policy_iteration.csv");
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
        for r in &log {
            w.serialize(r)?;
        }
        w.flush()?;
        Some(path)
    } else {
        None
    };
    Ok(RunOutput {
        results,
        manifest,
        rows,
        policy_iteration,
    })
}

/// Write the ground truth: `riccati.json` for the cart-pole, `grid.csv` for
/// the scalar problem, plus `region.json` with the confidence regions.
pub fn export_oracle(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.output_dir)?;
    let setup = setup(cfg)?;
    let mut written = Vec::new();
    match &setup.truth {
        Truth::Grid(g) => {
            let path = cfg.output_dir.join("grid.csv");
            g.write_csv(BufWriter::new(File::create(&path)?))?;
            written.push(path);
        }
        Truth::Riccati(r) => {
            let path = cfg.output_dir.join("riccati.json");
            r.write_json(BufWriter::new(File::create(&path)?))?;
            written.push(path);
        }
    }
    let path = cfg.output_dir.join("region.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &setup.region)?;
    written.push(path);
    Ok(written)
}

/// Bias/variance of every configured estimator at pinned states, and the
/// bias-bound report, for the first configured degree and sample count.
pub fn diagnose(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.output_dir)?;
    let setup = setup(cfg)?;
    let dp = &setup.dp;
    let step = cfg.diagnose.step.unwrap_or(dp.steps() / 2);
    if step >= dp.steps() {
        return Err(Error::invalid(format!("diagnose step {step} has no successor")));
    }
    let seed = derive_seed(cfg.seed, &[LABEL_DIAGNOSE]);
    let batch = sample_forward_with(
        dp,
        setup.policy.as_ref(),
        &setup.drift,
        cfg.samples[0],
        seed,
        &setup.sampling,
    )?;
    let spec = BasisSpec::new(dp.dim_x(), cfg.degrees[0])?;
    let gt = setup.truth.as_ground_truth();

    let bv_path = cfg.output_dir.join("bias_variance.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&bv_path)?));
    w.write_record(["estimator", "step", "trajectory", "mean", "bias", "variance", "stderr", "resamples"])?;
    let pins = cfg.diagnose.cells.min(batch.samples());
    let mut reports = Vec::new();
    for &kind in &cfg.estimators {
        let m = backward_pass(dp, setup.policy.as_ref(), &batch, kind, &spec, cfg.ridge)?;
        for k in 0..pins {
            let bv = estimator_bias_variance(
                kind,
                dp,
                setup.policy.as_ref(),
                &m,
                step,
                &batch.state(k, step),
                &batch.drift(k, step),
                cfg.diagnose.resamples,
                derive_seed(seed, &[k as u64]),
                Some(gt),
            )?;
            w.write_record([
                kind.name().to_string(),
                step.to_string(),
                k.to_string(),
                bv.mean.to_string(),
                bv.bias.map(|b| b.to_string()).unwrap_or_default(),
                bv.variance.to_string(),
                bv.stderr.to_string(),
                bv.resamples.to_string(),
            ])?;
        }
        if kind.is_taylor() && reports.is_empty() {
            reports.push(bias_bound_check(
                dp,
                setup.policy.as_ref(),
                &m,
                &batch,
                step,
                Some(gt),
                &BoundOptions {
                    resamples: cfg.diagnose.resamples,
                    cells: cfg.diagnose.cells,
                    seed,
                },
            )?);
        }
    }
    w.flush()?;
    let mut written = vec![bv_path];
    if let Some(report) = reports.pop() {
        let path = cfg.output_dir.join("bias_bound.csv");
        report.write_csv(BufWriter::new(File::create(&path)?))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_cost: f64,
    pub stderr: f64,
    pub mean_rae: f64,
}

/// Alternate on-policy value estimation and Taylor Q-value improvement,
/// starting from the reference policy, with the first configured estimator,
/// degree and sample count. Row 0 is the reference policy itself.
pub fn policy_iteration(setup: &Setup, cfg: &ExperimentConfig) -> Result<Vec<IterationRecord>> {
    let dp = &setup.dp;
    let spec = BasisSpec::new(dp.dim_x(), cfg.degrees[0])?;
    let kind = cfg.estimators[0];
    let samples = cfg.samples[0];
    let options = PolicyOptions {
        search_range: match dp.control_box().is_bounded() {
            true => None,
            false => Some(crate::problems::ControlBox::symmetric(dp.dim_u(), 100.0)?),
        },
        ..PolicyOptions::default()
    };
    let mut policy = setup.policy.clone();
    let mut log = Vec::new();
    for it in 0..=cfg.policy_iterations {
        let seed = derive_seed(cfg.seed, &[LABEL_POLICY, it as u64]);
        let cost = rollout_cost(dp, policy.as_ref(), cfg.oracle.reference_samples, seed)?;
        let batch = sample_forward_with(
            dp,
            policy.as_ref(),
            &DriftProcess::OnPolicy,
            samples,
            derive_seed(seed, &[0]),
            &SamplingOptions {
                drift_cap: f64::INFINITY,
            },
        )?;
        let m = Arc::new(backward_pass(dp, policy.as_ref(), &batch, kind, &spec, cfg.ridge)?);
        let rae = mean_rae(&m, setup.truth.as_ground_truth(), &setup.region).unwrap_or(f64::INFINITY);
        log.push(IterationRecord {
            iteration: it,
            mean_cost: cost.mean,
            stderr: cost.stderr,
            mean_rae: rae,
        });
        policy = Arc::new(ImprovedPolicy::new(m, dp.clone(), ImprovementRule::TaylorQ, options.clone())?);
    }
    Ok(log)
}
