//! Experiment runner for `cpshape-core`: configuration files, parallel
//! replica campaigns, CSV/JSON artifacts and the `cpshape` command line.

pub mod campaign;
pub mod config;
pub mod error;
pub mod output;

pub use config::{ExperimentConfig, Subcommand};
pub use error::{Result, RunError};
pub use output::{run, RunOutcome};
