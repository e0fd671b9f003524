use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite values produced by {0}")]
    NonFinite(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("training diverged at {context}: last loss {last_loss}")]
    TrainingDivergence { context: String, last_loss: f64 },

    #[error("sampling diverged at timestep {t}")]
    SamplingDivergence { t: usize },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag, used by the CLI's single-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Validation(_) => "validation",
            Error::State(_) => "state",
            Error::NonFinite(_) => "non-finite",
            Error::Capacity(_) => "capacity",
            Error::TrainingDivergence { .. } => "training-divergence",
            Error::SamplingDivergence { .. } => "sampling-divergence",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
