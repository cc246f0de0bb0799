//! Inductive conformal prediction for regression.
//!
//! This crate holds the numerical side of the lab: synthetic data generation,
//! the three underlying regressors (mean-variance network, Gaussian process,
//! gradient-boosted quantile regression), the nonconformity measures, the ICP
//! calibration engine and the validity/efficiency metrics. It is `no_std` and
//! only needs `alloc`; file formats, configuration and the experiment runner
//! live in the `cplab` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod icp;
pub mod linalg;
pub mod math;
pub mod models;
pub mod ncm;
pub mod rng;

pub use error::{Error, Result};
