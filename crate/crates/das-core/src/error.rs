//! Error taxonomy shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DasError {
    /// Shape or dimension disagreement between tensors.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid argument value (empty input, out-of-range index, bad config value).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Malformed file contents; offset is the first offending byte where known.
    #[error("format error in {path} at byte {offset}: {detail}")]
    Format {
        path: String,
        offset: u64,
        detail: String,
    },

    /// Operation applied in a state that does not support it
    /// (e.g. backward through a tensor that is not on the tape).
    #[error("invalid state: {0}")]
    State(String),

    /// Training produced a non-finite loss.
    #[error("divergence in phase {phase} at epoch {epoch}, batch {batch}: non-finite loss")]
    Divergence {
        phase: String,
        epoch: usize,
        batch: usize,
    },

    /// Metric is undefined for the given confusion matrix.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Requested feature is outside the supported envelope (e.g. top-k with k != 1).
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DasError {
    /// Process exit code used by the command-line frontend.
    /// 1 usage/config, 2 data or file format, 3 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            DasError::Divergence { .. } => 3,
            DasError::Format { .. } | DasError::Io(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, DasError>;
