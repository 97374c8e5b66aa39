//! Scenario files and subcommands behind the `lie-errdyn` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

pub use commands::{cmd_check, cmd_oracle, cmd_propagate, cmd_sde, Outcome};
pub use config::{Overrides, ScenarioConfig};
pub use error::CliError;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "LIE_ERRDYN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Propagate,
    Sde,
    Oracle,
}

/// Loads the config, applies overrides, creates the output directory and
/// runs the command.
pub fn run(
    command: Command,
    config: &Path,
    overrides: &Overrides,
    out: Option<&Path>,
) -> Result<Outcome, CliError> {
    let mut cfg = ScenarioConfig::load(config)?;
    cfg.apply(overrides)?;
    let dir: PathBuf = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    match command {
        Command::Check => cmd_check(&cfg, &dir),
        Command::Propagate => cmd_propagate(&cfg, &dir),
        Command::Sde => cmd_sde(&cfg, &dir),
        Command::Oracle => cmd_oracle(&cfg, &dir),
    }
}

/// Thread count from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV}: expected a positive integer, got {v:?}"))),
        },
    }
}
