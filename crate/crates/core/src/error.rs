use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in {field}: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    Numeric { op: String },

    #[error("coverage error: pixel ({row}, {col}) not covered by any patch")]
    Coverage { row: usize, col: usize },

    #[error("loss error: {0}")]
    Loss(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    /// Short stable name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Argument(_) => "argument",
            Error::Shape { .. } => "shape",
            Error::Numeric { .. } => "numeric",
            Error::Coverage { .. } => "coverage",
            Error::Loss(_) => "loss",
            Error::Evaluation(_) => "evaluation",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
