//! Experiment runner for the Pool model: config documents, deterministic
//! ensembles and artifact files.

pub mod config;
pub mod error;
pub mod io;
pub mod run;

pub use config::{parse_config, parse_config_for, Command, ExperimentConfig, Parameters};
pub use error::{CliError, Result};
pub use io::{read_trajectory_csv, write_trajectory_csv};
pub use run::{load_run, run_ensemble, Outcome};
