use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("audio too short: {len} samples, need at least {min}")]
    AudioTooShort { len: usize, min: usize },

    #[error("silent input: peak amplitude is zero")]
    SilentInput,

    #[error("window/hop pair violates the constant-overlap-add condition")]
    NonCola,

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("wav error for {path}: {source}")]
    Wav {
        path: PathBuf,
        source: hound::Error,
    },

    #[error("unsupported wav format for {path}: {detail}")]
    WavFormat { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
