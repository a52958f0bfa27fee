//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: io error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: truncated at byte offset {offset}: needed {needed} more byte(s)")]
    Truncated {
        path: PathBuf,
        offset: u64,
        needed: u64,
    },

    #[error("{path}: non-finite value at byte offset {offset}")]
    NonFinite { path: PathBuf, offset: u64 },

    #[error("{path}: {what} at byte offset {offset}")]
    Malformed {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    #[error("{path}:{line}: {what}")]
    TextParse {
        path: PathBuf,
        line: usize,
        what: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("no default architecture for {bits} bits at input dim {input_dim}; supply one explicitly")]
    UnsupportedArchitecture { bits: usize, input_dim: usize },

    #[error("rank deficiency: requested {requested} components but data rank is {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("non-finite gradient during {context}")]
    NonFiniteGradient { context: String },

    #[error("non-finite loss at layer {layer} (iteration {iteration})")]
    NonFiniteLoss { layer: usize, iteration: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
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
