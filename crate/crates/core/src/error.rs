use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A field, kernel, or state had the wrong shape for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A configuration value violated an invariant.
    #[error("invalid config: {0}")]
    Config(String),

    /// A non-finite value appeared where one is not allowed.
    #[error("non-finite value in {context} at index {index:?}")]
    NonFinite { context: &'static str, index: Vec<usize> },

    /// Training produced a non-finite loss term.
    #[error("training diverged at epoch {epoch}: {term} is non-finite")]
    Diverged { epoch: usize, term: &'static str },

    /// A metric is undefined for the given inputs (e.g. zero-variance truth).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// A linear system stayed singular after diagonal regularization.
    #[error("singular linear system in {context} after jitter {jitter:e}")]
    Singular { context: &'static str, jitter: f64 },

    /// A file had an unsupported or corrupt layout.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// A checkpoint was written by an incompatible version.
    #[error("checkpoint version {found} not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encode error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(context: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Dimension {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
