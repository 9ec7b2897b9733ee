//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("unknown client {0}")]
    UnknownClient(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("idx format error in {path}: {reason}")]
    IdxFormat { path: String, reason: String },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
