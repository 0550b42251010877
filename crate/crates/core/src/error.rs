use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unresolved references: {}", .0.join(", "))]
    DanglingReferences(Vec<String>),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("unknown passage `{0}`")]
    UnknownPassage(String),

    #[error("topic `{0}` has no relevant passages; out-of-KB questions must not be scored with NDCG")]
    UndefinedTopic(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("expected {expected} vectors, got {actual}")]
    CountMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("root finding did not converge: {0}")]
    NonConvergence(String),

    #[error("missing answer record for question `{0}`")]
    MissingAnswer(String),

    #[error("reports were computed over different collections or metric options")]
    MismatchedReports,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
