use std::path::PathBuf;

use crate::training::TrainReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    /// A backward pass was handed a cache that does not belong to the
    /// parameters or model it is being applied to.
    #[error("cache does not match forward pass: {0}")]
    CacheMismatch(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged: {reason}")]
    TrainingDiverged {
        reason: String,
        /// Epoch records completed before the divergence, when known.
        partial: Option<Box<TrainReport>>,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
