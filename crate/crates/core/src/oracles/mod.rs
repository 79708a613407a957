//! Reference value functions used to score learned models.

pub mod grid;
pub mod quadrature;
pub mod riccati;

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::Result;

pub use grid::{grid_bellman, Axis, GridPolicy, GridSpec, GridTruth};
pub use quadrature::GaussHermite;
pub use riccati::{riccati_discrete, riccati_for, riccati_value, RiccatiTruth};

/// Exact (or converged) optimal value `V*_i(x)`.
pub trait GroundTruth: Send + Sync {
    fn value(&self, i: usize, x: &DVector<f64>) -> Result<f64>;
}

impl GroundTruth for GridTruth {
    fn value(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        GridTruth::value(self, i, x)
    }
}

impl GroundTruth for RiccatiTruth {
    fn value(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        Ok(RiccatiTruth::value(self, i, x))
    }
}

pub type TruthFn = Arc<dyn Fn(usize, &DVector<f64>) -> f64 + Send + Sync>;

/// Ground truth given by a closure.
#[derive(Clone)]
pub struct FnTruth(pub TruthFn);

impl FnTruth {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(usize, &DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self(Arc::new(f))
    }
}

impl GroundTruth for FnTruth {
    fn value(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        Ok((self.0)(i, x))
    }
}

pub fn gt_eval(gt: &dyn GroundTruth, i: usize, x: &DVector<f64>) -> Result<f64> {
    gt.value(i, x)
}
