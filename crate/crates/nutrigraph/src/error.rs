//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("goal not found for query {query:?}; available targets: {available:?}")]
    GoalNotFound {
        query: String,
        available: Vec<String>,
    },

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("text backend failure: {message}; prompt was:\n{prompt}")]
    Backend { message: String, prompt: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 usage, 3 data, 4 insufficient data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::InsufficientData(_) => 4,
            _ => 3,
        }
    }
}
