//! Experiment runner for split conformal regression: configuration, dataset
//! files, sweep execution and CSV reports.

pub mod config;
pub mod csv_io;
pub mod error;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
