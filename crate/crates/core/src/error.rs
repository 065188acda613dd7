use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    Vocabulary { id: u32, vocab_size: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("alignment mismatch: expected {expected} records, found {actual}")]
    Alignment { expected: usize, actual: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input rather than the
    /// filesystem or a numeric blow-up.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Numeric(_))
    }
}
