//! Command-line front end for federated experiments: configuration,
//! dataset generation, experiment runs and multi-seed reports.

pub mod config;
pub mod data;
pub mod error;
pub mod report;
pub mod run;

pub use config::{preset, DataConfig, DataSource, ExperimentConfig, Preset};
pub use error::{CliError, CliResult};
