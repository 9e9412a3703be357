use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed input: skipped {skipped} of {total} rows")]
    MalformedInput { skipped: usize, total: usize },

    #[error("dataset is empty after preprocessing")]
    EmptyDataset,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("item index {index} out of range for vocabulary of size {size}")]
    Vocab { index: usize, size: usize },

    #[error("item {0} is not a node of the global graph")]
    MissingNode(usize),

    #[error("graph structure error: {0}")]
    Structural(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Validation errors map to CLI exit status 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Precondition(_) | Error::Vocab { .. }
        )
    }
}
