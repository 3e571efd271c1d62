//! Command-line experiment runner for the SURGE filter.

pub mod config;
pub mod run;

pub use config::{resolve, validate_config, ConfigErrors, ExperimentConfig};
pub use run::{generate_scenario, run_experiment, RunError, RunSummary};
