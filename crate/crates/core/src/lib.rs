//! Long-term test-time adaptation laboratory.
//!
//! The crate is split along the lines of an adaptation run:
//!
//! - [`diffnet`]: a small dense classifier with exact backpropagation.
//! - [`driftgen`]: deterministic, collapse-prone synthetic domain streams.
//! - [`asr`]: the adaptive and selective reset controller (concentration
//!   tracking, reset scope, Fisher-weighted knowledge recovery, on-the-fly
//!   adjustment of the regularizer and momentum).
//! - [`engine`]: runs one strategy over one stream and produces a [`engine::RunRecord`].
//! - [`metrics`]: pure functions over run records (coverage, reset cost,
//!   knowledge recovery, correlation).

pub mod asr;
pub mod diffnet;
pub mod driftgen;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod seed;
pub mod source;

pub use error::{Error, Result};
