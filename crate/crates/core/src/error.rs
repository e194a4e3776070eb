use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid exposure code {0:?}: expected a non-empty string of '0'/'1'")]
    InvalidCode(String),

    #[error("zero light throughput: code {0} has no open segments")]
    ZeroThroughput(String),

    #[error("length mismatch: {what} (expected {expected}, got {actual})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no candidate codes survive the filter: {0}")]
    EmptySearch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("object out of bounds: {0}")]
    OutOfBounds(String),

    #[error("index out of range: frame index {index} for a {len}-frame code")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("selective extraction requires a checkpoint trained without self-recursion")]
    SelectiveOnRecursive,

    #[error("no videos found under {0}")]
    NoVideos(PathBuf),

    #[error("video {video} has {frames} frames, fewer than the window of {window}")]
    VideoTooShort {
        video: String,
        frames: usize,
        window: usize,
    },

    #[error("dimensions {height}x{width} are not divisible by 4; pad the input to {padded_height}x{padded_width}")]
    IndivisibleDims {
        height: usize,
        width: usize,
        padded_height: usize,
        padded_width: usize,
    },

    #[error("non-finite loss at step {step}; last batch saved to {}", dump.display())]
    NonFiniteLoss { step: u64, dump: PathBuf },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's request rather than by the
    /// environment or the computation (bad flags, bad indices, bad modes).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidCode(_)
                | Error::ZeroThroughput(_)
                | Error::LengthMismatch { .. }
                | Error::EmptySearch(_)
                | Error::InvalidArgument(_)
                | Error::OutOfBounds(_)
                | Error::IndexOutOfRange { .. }
                | Error::SelectiveOnRecursive
                | Error::IndivisibleDims { .. }
                | Error::Config(_)
        )
    }
}
