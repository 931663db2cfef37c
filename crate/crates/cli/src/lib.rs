//! Experiment orchestration around the core library: a TOML experiment
//! description drives training runs, extrapolation sweeps, slow-point
//! extraction, history backtracking, regularized fine-tuning, and a text
//! report, with every artifact kept under one directory per experiment.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod pca;

use std::fmt;

/// Errors carrying the process exit code: misconfiguration is 2, a missing
/// prerequisite artifact is 3, anything else fails with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingInput(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::MissingInput(msg) => write!(f, "missing input: {msg}"),
            CliError::Failure(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<memlab_core::Error> for CliError {
    fn from(e: memlab_core::Error) -> Self {
        match &e {
            memlab_core::Error::MissingSnapshot { .. } => CliError::MissingInput(e.to_string()),
            memlab_core::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingInput(e.to_string())
            }
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(e.to_string())
        } else {
            CliError::Failure(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
