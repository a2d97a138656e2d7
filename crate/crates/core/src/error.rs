use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),

    #[error("graph is not hollow: diagonal entry ({0}, {0}) is non-zero")]
    NotHollow(usize),

    #[error("entry ({row}, {col}) = {value} is not valid for a {kind} graph")]
    InvalidEntry {
        row: usize,
        col: usize,
        value: f64,
        kind: &'static str,
    },

    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),

    #[error("mismatched vertex counts: expected {expected}, found {found}")]
    MismatchedVertexCount { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular score matrix for graph {0}")]
    SingularScore(usize),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("omnibus matrix of order {order} exceeds the configured cap {cap}")]
    OmnibusTooLarge { order: usize, cap: usize },

    #[error("numerical routine failed: {0}")]
    Numerical(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
