//! Experiment runner for the `lamcts` optimizer: runs repeats of a method on
//! a benchmark, writes CSV traces and JSON summaries, and compares or
//! re-verifies summaries afterwards.

pub mod compare;
pub mod config;
pub mod error;
pub mod runner;
pub mod summary;
pub mod trace;

pub use config::{ExperimentConfig, Method, Overrides};
pub use error::{CliError, Result};
