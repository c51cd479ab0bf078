use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("descriptor comparison: {0}")]
    Comparison(String),
    #[error("alignment failed: {0}")]
    AlignmentFailed(String),
    #[error("pose graph is not connected: {0}")]
    Connectivity(String),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable category used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Parameter(_) => "parameter",
            Error::Degenerate(_) => "degenerate",
            Error::Comparison(_) => "comparison",
            Error::AlignmentFailed(_) => "alignment",
            Error::Connectivity(_) => "connectivity",
            Error::EmptySelection(_) => "empty-selection",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
