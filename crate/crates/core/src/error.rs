use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error on {axis}: expected {expected}, got {actual}")]
    Dimension { axis: String, expected: usize, actual: usize },

    #[error("degenerate batch: channel {channel} has only {count} element(s) in training mode")]
    DegenerateBatch { channel: usize, count: usize },

    #[error("poisoned gradient in parameter `{name}`")]
    PoisonedGradient { name: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot step a crashed world")]
    DeadState,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("not enough `{class}` transitions: need {needed}, have {available}")]
    DataStarvation { class: String, needed: usize, available: usize },

    #[error("checkpoint error at tensor `{tensor}`: {message}")]
    Checkpoint { tensor: String, message: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {what} is not finite")]
    TrainingDiverged { epoch: usize, batch: usize, what: &'static str },

    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
}

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            axis: axis.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
