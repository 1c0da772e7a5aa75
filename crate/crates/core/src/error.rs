use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("payload mismatch for array `{name}`: expected {expected} bytes, found {found}")]
    PayloadMismatch { name: String, expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite value at cascade {cascade}")]
    Diverged { cascade: usize },

    #[error("training aborted at epoch {epoch}, sample {sample}: {reason}")]
    TrainingAborted { epoch: usize, sample: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
