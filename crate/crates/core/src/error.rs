use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    #[error("track {track}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        track: String,
        expected: usize,
        found: usize,
    },

    #[error("track {track}: value {value} is outside [0, 1]")]
    OutOfRange { track: String, value: f64 },

    #[error("duplicate track id {0}")]
    DuplicateId(String),

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("track {0} has not been segmented")]
    NotSegmented(String),

    #[error("track {0} is not in the catalog")]
    UnknownTrack(String),

    #[error("track {track}: invalid segments: {message}")]
    InvalidSegments { track: String, message: String },

    #[error("need at least {needed} frames, got {found}")]
    TooFewFrames { needed: usize, found: usize },

    #[error("kernel size {0} must be even and at least 2")]
    OddKernel(usize),

    #[error("kernel size {kernel} exceeds frame count {frames}")]
    KernelTooLarge { kernel: usize, frames: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported model file version {0:?}")]
    VersionMismatch(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("no candidate tracks remain")]
    NoCandidates,

    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Divergence { epoch: usize, what: &'static str },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
