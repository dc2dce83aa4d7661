use std::path::PathBuf;

use thiserror::Error;

/// Failure reasons when reading a checkpoint file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic: expected \"FMPX\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("config fingerprint mismatch: file {file:#018x}, model {model:#018x}")]
    FingerprintMismatch { file: u64, model: u64 },
    #[error("tensor count mismatch: file has {file}, model expects {model}")]
    TensorCountMismatch { file: u32, model: u32 },
    #[error("truncated file while reading {context}")]
    Truncated { context: String },
    #[error("unknown tensor {name:?}")]
    UnknownTensor { name: String },
    #[error("tensor {name:?} shape {file:?} does not match model shape {model:?}")]
    TensorShapeMismatch {
        name: String,
        file: Vec<usize>,
        model: Vec<usize>,
    },
    #[error("invalid tensor name encoding")]
    BadName,
    #[error("trailing bytes after last tensor")]
    TrailingBytes,
    #[error("tensor {name:?} appears twice")]
    DuplicateTensor { name: String },
}

impl CheckpointError {
    /// Stable numeric code, distinct per failure class.
    pub fn code(&self) -> u8 {
        match self {
            CheckpointError::BadMagic { .. } => 10,
            CheckpointError::UnsupportedVersion { .. } => 11,
            CheckpointError::FingerprintMismatch { .. } => 12,
            CheckpointError::TensorCountMismatch { .. } => 13,
            CheckpointError::Truncated { .. } => 14,
            CheckpointError::UnknownTensor { .. } => 15,
            CheckpointError::TensorShapeMismatch { .. } => 16,
            CheckpointError::BadName => 17,
            CheckpointError::TrailingBytes => 18,
            CheckpointError::DuplicateTensor { .. } => 19,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("function is not deterministic: two identical evaluations differ")]
    NonDeterministic,
    #[error("checkpoint {}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("image {}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
