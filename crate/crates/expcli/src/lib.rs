//! Experiment driver: scenario files, sweeps, scaling fits and run directories.

pub mod commands;
pub mod config;
pub mod error;
pub mod fit;
pub mod output;

pub use config::{Overrides, Scenario, ScenarioConfig, Tomography};
pub use error::{CliError, CliResult};
