use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("degenerate embedding: row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("class `{class}` has no patches available for split `{split}`")]
    MissingClass { class: String, split: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown augmentation stack `{name}`; registered stacks: {registry}")]
    UnknownStack { name: String, registry: String },

    #[error("run `{0}` already exists; pass force to overwrite")]
    RunExists(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
