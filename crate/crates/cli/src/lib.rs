//! Experiment runner for the adaptation lab: config parsing, run matrices,
//! record files, ranking and charts.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;
pub mod format;
pub mod plot;
pub mod record;

pub use error::{CliError, Result};
