//! Config-driven experiment runner for distributed Nash equilibrium
//! seeking. The `aggne` binary is a thin wrapper over [`cli::main_with_args`].

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::{emit_config, parse_config, ExperimentConfig};
pub use error::CliError;
pub use experiment::{run_experiment, RunOutcome, RunStatus};
