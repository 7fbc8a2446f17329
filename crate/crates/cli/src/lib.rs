//! Experiment driver: config parsing, the `run`, `verify`, `plot` and
//! `gen-topology` subcommands, CSV traces and SVG plots.

pub mod config;
pub mod gen;
pub mod plot;
pub mod run;
pub mod svg;
pub mod trace_csv;
pub mod verify;

use std::fmt;

pub use config::{ConfigError, RunConfig};
pub use run::{cmd_run, RunManifest};
pub use verify::{cmd_verify, verify_with_rule, VerifyOptions, VerifyReport};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    Config(String),
    /// Failure while executing; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

/// Worker count from `WPM_THREADS`; `None` when unset.
pub fn thread_count(value: Option<&str>) -> Result<Option<usize>, CliError> {
    match value {
        None => Ok(None),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("WPM_THREADS must be a positive integer, found {v:?}"))),
        },
    }
}
