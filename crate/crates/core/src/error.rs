use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: index {index} out of range for universe {universe}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        universe: usize,
    },

    #[error("index set is not strictly increasing")]
    UnsortedIndices,

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("layer {index}: {source}")]
    Layer {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot prune layer {layer}: {reason}")]
    Prune { layer: usize, reason: String },

    #[error("example {0} has no activation mask")]
    MissingMask(usize),

    #[error("config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_layer(self, index: usize) -> Error {
        Error::Layer {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::UnsortedIndices => "unsorted_indices",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::Layer { source, .. } => source.kind(),
            Error::Prune { .. } => "prune",
            Error::MissingMask(_) => "missing_mask",
            Error::Config { .. } => "config",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
