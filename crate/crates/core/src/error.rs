use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, QanError>;

#[derive(Debug, Error)]
pub enum QanError {
    #[error("layer `{layer}`: expected input of size {expected}, got {actual}")]
    DimensionMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch { context: &'static str, detail: String },

    #[error("non-finite gradient in parameter `{param}` at index {index}")]
    NonFiniteGradient { param: String, index: usize },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("empty set: pooling requires at least one sample")]
    EmptySet,

    #[error("qualities are not L1-normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("quality scores must be strictly positive (index {index}, value {value})")]
    NonPositiveQuality { index: usize, value: f64 },

    #[error("stale cache: embedding computed at generation {cached}, model is at {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("invalid label {label} for {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot form a triplet: {0}")]
    NoTriplet(String),

    #[error("zero-norm vector in cosine distance")]
    ZeroNorm,

    #[error("probe identities absent from gallery: {0:?}")]
    MissingGalleryIdentity(Vec<usize>),

    #[error("gallery identity {0} appears more than once")]
    DuplicateGalleryIdentity(usize),

    #[error("degenerate evaluation input: {0}")]
    Degenerate(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl QanError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QanError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &str, line: usize, msg: impl Into<String>) -> Self {
        QanError::Parse {
            path: path.to_string(),
            line,
            msg: msg.into(),
        }
    }
}
