//! Batch trajectory runner for monitored spin chains.
//!
//! [`config`] defines the TOML scenario schema, [`presets`] ships ready-made
//! scenarios, [`runner`] executes trajectory ensembles and writes
//! analysis-ready files, [`summary`] reduces ensembles to per-time statistics.

use thiserror::Error;

pub mod config;
pub mod presets;
pub mod runner;
pub mod summary;

/// CLI-facing errors with a machine-readable category; the category fixes
/// the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config { field: field.to_string(), message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError::Internal(message.into())
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io(_) => "io",
            CliError::Numerical(_) => "numerical",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<stochmps_core::Error> for CliError {
    fn from(e: stochmps_core::Error) -> Self {
        use stochmps_core::Error as E;
        match e {
            E::Numerical(m) => CliError::Numerical(m),
            E::Snapshot(m) => CliError::Io(m),
            other => CliError::Internal(other.to_string()),
        }
    }
}
