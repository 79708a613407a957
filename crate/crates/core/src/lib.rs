//! Taylor-expanded backward estimators for discrete-time forward-backward
//! stochastic difference equations.
//!
//! The crate covers the whole pipeline of a least-squares Monte Carlo value
//! estimate for a stochastic optimal control problem:
//!
//! - [`problems`]: continuous problems, Euler-Maruyama discretization and the
//!   two benchmark instances (scalar nonlinear, linearized cart-pole).
//! - [`sampling`]: forward paths under an arbitrary sampling drift, drift
//!   corrections and discrete Girsanov weights.
//! - [`value_model`]: Chebyshev value models with analytic derivatives and
//!   the regression step.
//! - [`estimators`]: the four backward regression targets.
//! - [`backward`]: the full backward pass.
//! - [`policy`]: Hamiltonian and Taylor Q-value policy improvement.
//! - [`oracles`]: exact value functions (gridded Bellman recursion, Riccati).
//! - [`metrics`]: confidence regions, relative absolute error, estimator
//!   diagnostics.
//! - [`config`], [`experiment`], [`heatmap`]: experiment orchestration used
//!   by the `fbsde` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod config;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod heatmap;
pub mod metrics;
pub mod oracles;
pub mod policy;
pub mod problems;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod value_model;

pub use error::{Error, Result};
