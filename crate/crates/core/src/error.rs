use thiserror::Error;

#[derive(Debug, Error)]
pub enum OwlError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad feature file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("duplicate class id {0}")]
    DuplicateClass(usize),
    #[error("checkpoint decode error: {0}")]
    Checkpoint(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<V> = std::result::Result<V, OwlError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(OwlError::DimMismatch { expected, got });
    }
    Ok(())
}
