use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the subsystem that
/// raises them; the CLI maps them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid dropout rate {0} (must be in [0, 1))")]
    InvalidDropoutRate(f64),

    #[error("index out of range in {op}: {detail}")]
    OutOfRange { op: &'static str, detail: String },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid manifest in {path}: {detail}")]
    InvalidManifest { path: PathBuf, detail: String },

    #[error("size mismatch for {path}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("label out of range in {path}: sample {sample} has label {label}, num_classes {num_classes}")]
    LabelOutOfRange {
        path: PathBuf,
        sample: usize,
        label: u32,
        num_classes: usize,
    },

    #[error("non-finite payload in {path} at byte offset {offset}")]
    NanPayload { path: PathBuf, offset: u64 },

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("corrupt checkpoint {path}: {detail}")]
    CorruptCheckpoint { path: PathBuf, detail: String },

    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code: 0 success, 1 internal/I-O, 2 usage, 3 data/model
    /// incompatibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_) | Error::InvalidConfig(_) => 2,
            Error::Incompatible(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
