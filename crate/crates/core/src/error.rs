use thiserror::Error;

/// Errors produced by the fairprobe core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected} labels, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("benefit vector is empty")]
    EmptyBenefitVector,

    #[error("invalid roster: {0}")]
    InvalidRoster(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid test: {0}")]
    InvalidTest(String),

    #[error("test space is exhausted")]
    Exhausted,

    #[error("unknown test id {0}")]
    UnknownTest(usize),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("responder failed: {0}")]
    Responder(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
