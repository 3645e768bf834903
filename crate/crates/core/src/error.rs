use std::fmt;

/// Errors raised by kernels, graph execution, loaders and file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected} but got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: invalid geometry: {msg}")]
    Geometry { op: &'static str, msg: String },

    #[error("concat: input {index} has shape {got}, incompatible with {expected}")]
    ConcatMismatch {
        index: usize,
        expected: String,
        got: String,
    },

    #[error("node `{node}`: {msg}")]
    Graph { node: String, msg: String },

    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    Label {
        label: usize,
        classes: usize,
        sample: usize,
    },

    #[error("non-finite value in `{name}`")]
    NonFinite { name: String },

    #[error("{file}: {msg} (byte offset {offset})")]
    Format {
        file: String,
        offset: u64,
        msg: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl fmt::Display, got: impl fmt::Display) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn geometry(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Geometry {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn graph(node: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Graph {
            node: node.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
