//! Experiment front-end: specs, datasets, checkpoints, result tables and the
//! train/evaluate pipeline behind the `jam` binary.

pub mod checkpoint;
pub mod dataset;
mod error;
pub mod results;
pub mod run;
pub mod spec;

pub use error::{CliError, CliResult};
