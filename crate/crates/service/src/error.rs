use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("gone: {0}")]
    Gone(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("event log corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Core(#[from] fairprobe::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ServiceError {
    /// Stable machine-readable code used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Validation(_) => "validation",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Gone(_) => "gone",
            ServiceError::Config(_) => "config",
            ServiceError::Corrupt { .. } => "corrupt_log",
            ServiceError::Core(_) | ServiceError::Io(_) | ServiceError::Json(_) => "internal",
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
