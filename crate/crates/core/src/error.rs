use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: malformed record: {msg}")]
    Malformed { file: String, line: usize, msg: String },

    #[error("dangling reference: {0}")]
    DanglingReference(String),

    #[error("inconsistent triplet: {0}")]
    Inconsistent(String),

    #[error("duplicate id: {0}")]
    Duplicate(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("sequence of length {len} exceeds context window {n_ctx}")]
    ContextOverflow { len: usize, n_ctx: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite loss encountered at {0}")]
    NonFinite(String),

    #[error("model not trained: {0}")]
    Untrained(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("stale artifact: {0}")]
    Stale(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 4,
            Error::InvalidConfig(_) => 2,
            _ => 3,
        }
    }
}
