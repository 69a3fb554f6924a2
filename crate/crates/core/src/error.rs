use std::path::PathBuf;

use thiserror::Error;

use crate::optim::TraceEntry;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("construction failed: {0}")]
    ConstructionFailure(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("non-finite value in {location}")]
    Numeric { location: String },

    #[error("optimizer diverged after {} iterations", trace.len())]
    Divergence { trace: Vec<TraceEntry> },

    #[error("forward operator ({rows}x{cols}) has no left inverse")]
    NoLeftInverse { rows: usize, cols: usize },

    #[error("forward operator ({rows}x{cols}) has no right inverse")]
    NoRightInverse { rows: usize, cols: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("relative error undefined for a zero reference vector")]
    UndefinedMetric,

    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::ConstructionFailure(_)
                | Error::Internal(_)
                | Error::Numeric { .. }
                | Error::Divergence { .. }
                | Error::NoLeftInverse { .. }
                | Error::NoRightInverse { .. }
                | Error::InsufficientData(_)
                | Error::UndefinedMetric
        )
    }
}
