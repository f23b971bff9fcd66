use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("corrupt record {index}: non-finite value")]
    CorruptRecord { index: usize },

    #[error("invalid scan: {0}")]
    InvalidScan(String),

    #[error("empty dataset under {0}")]
    EmptyDataset(PathBuf),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("distance undefined: {0}")]
    UndefinedDistance(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
