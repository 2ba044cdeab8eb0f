use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while decoding a RIFF/WAVE stream.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WavError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV codec (format tag {0}); only PCM (1) is accepted")]
    UnsupportedCodec(u16),
    #[error("unsupported bit depth {0}; only 16-bit PCM is accepted")]
    UnsupportedBitDepth(u16),
    #[error("unsupported channel count {0}; expected 1 or 2")]
    UnsupportedChannels(u16),
    #[error("truncated data chunk: header declares {declared} bytes, {available} present")]
    TruncatedData { declared: usize, available: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: WavError,
    },

    #[error(transparent)]
    WavStream(#[from] WavError),

    #[error("odd-length PCM16 payload ({0} bytes)")]
    OddPcmLength(usize),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("empty crop along the {axis} axis: {detail}")]
    EmptyCrop { axis: &'static str, detail: String },

    #[error("clip too short: {0}")]
    ClipTooShort(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
