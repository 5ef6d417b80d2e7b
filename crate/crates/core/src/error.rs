use std::path::PathBuf;

use thiserror::Error;

/// A precondition of a pure operation was violated (mixed-game action pair,
/// dimension mismatch, out-of-range probability, ...).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct DomainError(pub String);

impl DomainError {
    pub fn new(msg: impl Into<String>) -> Self {
        DomainError(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(#[from] DomainError),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("template error: missing binding for `{slot}`")]
    MissingBinding { slot: String },

    #[error("plan error: {0}")]
    Plan(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("gateway error: {0}")]
    Gateway(String),

    #[error("protocol violation after {attempts} attempts; last reply: {last_reply:?}")]
    ProtocolViolation { attempts: usize, last_reply: String },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
