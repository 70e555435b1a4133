use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error: {0}")]
    Wav(String),

    #[error("unsupported sample rate: {0} Hz (only 16000 Hz is accepted)")]
    UnsupportedSampleRate(u32),

    #[error("unsupported channel count: {0} (only mono is accepted)")]
    UnsupportedChannels(u16),

    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown variant {0:?}")]
    UnknownVariant(String),

    #[error("packet variant mismatch: expected {expected}, got {actual}")]
    VariantMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("session is closed")]
    SessionClosed,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error(transparent)]
    Model(#[from] crate::persistence::ModelFileError),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("missing result cells: {0}")]
    MissingCells(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            actual,
        }
    }
}
