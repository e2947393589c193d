use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("label {label} out of range at position {position} (vocabulary size {size})")]
    LabelOutOfRange { position: usize, label: usize, size: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("state space of {size} sequences exceeds limit {limit}")]
    StateSpaceTooLarge { size: u128, limit: u128 },

    #[error("non-finite objective at iteration {iteration} (step size too large?)")]
    NonFiniteObjective { iteration: usize },

    #[error("unknown image id {0:?}")]
    UnknownImage(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("tokens missing from vector file: {}", .0.join(", "))]
    MissingTokens(Vec<String>),

    #[error("unsupported model format version {found:?} (expected {expected})")]
    Version { found: String, expected: u32 },

    #[error("shape mismatch in {matrix}: expected {expected}, got {actual}")]
    Shape {
        matrix: String,
        expected: String,
        actual: String,
    },

    #[error("model file {0} is truncated")]
    Truncated(PathBuf),

    #[error("malformed model file {path}: {message}")]
    MalformedModel { path: PathBuf, message: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
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

    /// True for failures caused by numerics rather than input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteObjective { .. })
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
