use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite value in {what}")]
    Numeric { what: String },

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("score undefined: {0}")]
    UndefinedScore(String),

    #[error("loss mask selects no positions")]
    EmptyMask,

    #[error("missing checkpoint for variant {0}")]
    MissingCheckpoint(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn numeric(what: impl Into<String>) -> Self {
        Error::Numeric { what: what.into() }
    }

    /// Whether the error comes from numerics rather than from input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}
