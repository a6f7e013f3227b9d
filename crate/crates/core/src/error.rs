use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("masking mode mismatch: expected {expected}, got {actual}")]
    ModeMismatch {
        expected: crate::masking::MaskingMode,
        actual: crate::masking::MaskingMode,
    },

    #[error("layer mismatch: {0}")]
    LayerMismatch(String),

    #[error("empty support object: mask has no foreground weight")]
    EmptySupport,

    #[error("malformed array header: {0}")]
    MalformedHeader(String),

    #[error("unsupported element type {0:?} (expected '<f4' or '|u1')")]
    UnsupportedDtype(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("class {class_id} has {available} items, need at least {required}")]
    InsufficientItems {
        class_id: u32,
        available: usize,
        required: usize,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("episode {index}: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),

    #[error("metric undefined: {0}")]
    EmptyMetric(&'static str),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping path and episode context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } | Error::Episode { source, .. } => source.root(),
            other => other,
        }
    }
}
