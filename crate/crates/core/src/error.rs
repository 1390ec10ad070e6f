use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: line {line}: malformed header field `{field}`: {reason}")]
    Header {
        path: PathBuf,
        line: usize,
        field: String,
        reason: String,
    },

    #[error("{path}: payload holds {actual} bytes but header implies {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("unknown band role `{0}`")]
    UnknownBandRole(String),

    #[error("missing band {0}")]
    MissingBand(&'static str),

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {actual_w}x{actual_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("no palette entry for class id {0}")]
    MissingPalette(u32),

    #[error("infeasible scene geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("rule set syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("rule set error in `{field}`: {reason}")]
    Semantic { field: String, reason: String },

    #[error("no label for segment {0}")]
    MissingLabel(u32),

    #[error("feature arity mismatch: expected {expected}, got {actual}")]
    Arity { expected: usize, actual: usize },

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("class list mismatch: {0}")]
    ClassMismatch(String),

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png encoding failed: {0}")]
    Png(String),

    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
