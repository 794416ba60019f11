use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: index {index} out of range (bound {bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient element at index {index}")]
    NonFinite { index: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no output head for task {task}")]
    MissingHead { task: usize },
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
