//! Causal effect estimation for spatiotemporal panels whose exposures and
//! outcomes share unmeasured confounders with low-rank factor structure.
//!
//! The pipeline: [`panel`] holds the data, [`factor`] fits the latent factor
//! models, [`bias`] turns them into a bias matrix (partial-identification
//! intervals, masked Procrustes), and [`estimators`] runs the three-step
//! estimator and its baselines. [`sim`] generates benchmark scenarios.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod factor;
pub mod numerics;
pub mod panel;
pub mod rng;
pub mod sim;
pub mod spline;

pub use error::{Error, Result};
