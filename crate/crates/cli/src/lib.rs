//! Experiment driver for the `trades` binary: TOML configs, scenario
//! assembly and the run / validate / sweep / case-study commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod scenario;

use std::path::{Path, PathBuf};

pub use commands::{
    case_study, run_experiment, sweep, validate, CaseArtifacts, RunArtifacts, SweepCell,
    ValidationReport,
};
pub use config::{ExperimentConfig, Scenario};

/// Overrides the configured output directory (but not `--out`).
pub const OUT_DIR_ENV: &str = "TRADES_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] trades_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| Self::Io { context, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Validate,
    Sweep,
    CaseStudy,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub oracle: Option<bool>,
}

/// Loads the config and applies overrides. Precedence for the output
/// directory is `--out`, then the environment variable, then the file.
pub fn resolve_config(path: &Path, ov: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        cfg.out_dir = dir.into();
    }
    if let Some(dir) = &ov.out {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = ov.seed {
        cfg.trades.seed = seed;
    }
    if let Some(on) = ov.oracle {
        cfg.oracle = on;
    }
    Ok(cfg)
}

/// Runs one command and maps the outcome to a process exit code.
pub fn execute(command: Command, config: &Path, ov: &Overrides) -> i32 {
    let result = resolve_config(config, ov).and_then(|cfg| match command {
        Command::Run => commands::cmd_run(&cfg),
        Command::Validate => commands::cmd_validate(&cfg),
        Command::Sweep => commands::cmd_sweep(&cfg),
        Command::CaseStudy => commands::cmd_case_study(&cfg),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
