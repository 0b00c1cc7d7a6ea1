//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error")]
    Io(#[from] std::io::Error),

    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("feature file format error: {0}")]
    Format(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("user {user} has only {degree} interactions, need at least {min} to split")]
    UserTooSparse {
        user: String,
        degree: usize,
        min: usize,
    },

    #[error("user {0} interacts with every item; cannot sample a negative")]
    NoNegativeAvailable(usize),

    #[error("non-finite value in {context}{}",
            .triplet.map(|(u, p, n)| format!(" (triplet u={u} p={p} n={n})")).unwrap_or_default())]
    NonFinite {
        context: String,
        triplet: Option<(usize, usize, usize)>,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("no evaluable users in split")]
    NoEvaluableUsers,

    #[error("json error")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
