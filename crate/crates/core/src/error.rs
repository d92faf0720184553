//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (carries a 1-based line number when known).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Grid dimensions do not line up (ragged trajectories, bad matrix shape).
    #[error("shape error: {0}")]
    Shape(String),

    /// Data violates a declared invariant (non-finite value, unknown action, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A selection of subjects or time steps contains no transitions.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    /// Configuration parameter outside its allowed range.
    #[error("config error: {0}")]
    Config(String),

    /// Regressor fitting failed inside fitted-Q iteration.
    #[error("policy fit error at iteration {iteration}: {msg}")]
    PolicyFit { iteration: usize, msg: String },

    /// Every candidate in a selection run failed.
    #[error("all candidates failed: {0}")]
    AllCandidatesFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by bad user input rather than runtime failure.
    /// The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Shape(_)
                | Error::Validation(_)
                | Error::Config(_)
                | Error::EmptySelection(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
