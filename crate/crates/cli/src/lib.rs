//! Scenario files, the run pipeline and CSV reports for the `acert` binary.

pub mod catalog;
pub mod config;
pub mod output;
pub mod pipeline;

pub use config::{ConfigError, Scenario};
pub use pipeline::{run_scenario, RunOptions, RunReport, EXIT_CERT_FAIL};
