use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{parse_config, ExperimentConfig};
use crate::error::CliError;
use crate::experiment::{oracle_summary, run_experiment, validate_experiment};
use crate::output::to_toml;

#[derive(Debug, Parser)]
#[command(
    name = "aggne",
    version,
    about = "Distributed optimal Nash equilibrium seeking"
)]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write trace.csv and report.toml.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides output_path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print the constants and safe step bound.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print x*, the constants and the safe step bound.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    parse_config(&text).map_err(|e| e.in_config(path))
}

fn load_unchecked(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    toml::from_str(&text).map_err(|e| CliError::Parse(e.to_string()).in_config(path))
}

/// Executes one command, returning the text for stdout.
pub fn execute(args: Args) -> Result<String, CliError> {
    match args.command {
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let outcome = run_experiment(&cfg, out.as_deref())
                .map_err(|e| e.in_config(&config))?
                .into_result()?;
            Ok(format!(
                "{} rows written to {}\n",
                outcome.trace.rows.len(),
                outcome.out_dir.display()
            ))
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            to_toml(&validate_experiment(&cfg).map_err(|e| e.in_config(&config))?)
        }
        Command::Oracle { config } => {
            let cfg = load_unchecked(&config)?;
            to_toml(&oracle_summary(&cfg).map_err(|e| e.in_config(&config))?)
        }
    }
}

/// Parses arguments, runs, prints and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(args) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
