use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: usize, detail: String },

    #[error("unbound input at node {node}")]
    UnboundInput { node: usize },

    #[error("backward seed node {node} is not a scalar")]
    NonScalarSeed { node: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("tolerance not met: {0}")]
    Tolerance(String),

    #[error("parse error at {location}: {detail}")]
    Parse { location: String, detail: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
