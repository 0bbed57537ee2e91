use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("inconsistent keypoint file: {0}")]
    Structure(String),

    #[error("degenerate frame: all keypoints of hand {hand} coincide with the wrist")]
    DegenerateFrame { hand: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stream too short: {frames} frames for a window of {window}")]
    StreamTooShort { frames: usize, window: usize },

    #[error("non-finite gradient in parameter `{param}` at index {index}")]
    NonFiniteGradient { param: String, index: usize },

    #[error("not a weights file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported weights format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("weights file truncated: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },

    #[error("weights file has {0} trailing bytes")]
    TrailingBytes(usize),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
