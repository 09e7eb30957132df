//! Detectability thresholds and detectors for planted network anomalies.
//!
//! * [`info_metrics`]: closed-form divergences, information budgets and the
//!   mixture lower bound.
//! * [`graph_sim`]: seeded Erdős–Rényi / planted-dense-subgraph graphs and
//!   edge perturbations.
//! * [`spectral`]: the non-backtracking and Bethe–Hessian static tests.
//! * [`temporal_sim`]: Poisson and exponential-kernel Hawkes event networks.
//! * [`sequential`]: likelihood CUSUM, support scans and ARL calibration.
//! * [`harness`]: sweeps, the worked case study and run configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod graph_sim;
pub mod harness;
pub mod info_metrics;
pub mod rng;
pub mod sequential;
pub mod spectral;
pub mod temporal_sim;

pub use error::{Error, Result};
