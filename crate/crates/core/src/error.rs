use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tokenize error at byte {pos}: {msg}")]
    Tokenize { pos: usize, msg: String },

    #[error("sequence needs {needed} slots but maximum length is {max}")]
    Length { needed: usize, max: usize },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("loss does not depend on any trainable tensor")]
    DetachedGraph,

    #[error("invalid number of diffusion steps T={0} (need T >= 2)")]
    InvalidT(usize),

    #[error("invalid respaced step count {s} for interval of length {len}")]
    InvalidS { s: usize, len: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("diffusion step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("description is empty after tokenization")]
    EmptyText,

    #[error("fingerprint sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("paired inputs differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unexpected header: {0}")]
    Header(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model not loaded: {0}")]
    ModelNotLoaded(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
