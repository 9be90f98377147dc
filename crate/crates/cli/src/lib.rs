//! Config-driven front end for the `fedrep` simulator: parses experiment
//! files, runs one experiment kind and writes a CSV plus a JSON summary.

pub mod config;
pub mod runner;

pub use config::{parse_config, ExperimentConfig, Kind, ParseError};
pub use runner::{run_experiment, RunError};
