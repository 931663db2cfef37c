//! Crate-wide error type. Anything user-recoverable (bad file, bad config,
//! divergence mid-run) is an `Error`; internal contract violations are
//! assertions at the call sites instead.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension { context: &'static str, expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset error in {field}: {message}")]
    Dataset { field: String, message: String },

    #[error("class {class} has no samples in the corpus")]
    EmptyClass { class: usize },

    #[error("no admissible stimulus/response placement for trial length {t_max}")]
    NoAdmissiblePair { t_max: usize },

    #[error("invalid curriculum schedule: {0}")]
    Schedule(String),

    #[error("loss became non-finite at training step {step} (trial {trial} of the batch)")]
    NonFiniteLoss { step: u64, trial: usize },

    #[error("non-finite state passed to {context}")]
    NonFiniteState { context: &'static str },

    #[error("no snapshot within {tolerance} steps of step {step}")]
    MissingSnapshot { step: u64, tolerance: u64 },

    #[error("checkpoint archive error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
