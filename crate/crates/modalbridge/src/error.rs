use thiserror::Error;

/// Errors surfaced by the tensor engine, networks, data generator and pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation received tensors whose shapes do not conform to its rule.
    /// The message names the operation and both shapes.
    #[error("shape error in `{op}`: {message}")]
    Shape { op: &'static str, message: String },

    /// `backward` was called on a tensor that is not a scalar.
    #[error("backward requires a scalar loss of shape [1], got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// `backward` was called before any differentiable operation was recorded.
    #[error("backward called on an empty graph")]
    EmptyGraph,

    /// An optimizer step found a parameter without a populated gradient.
    #[error("parameter `{0}` has no gradient; run backward before stepping")]
    MissingGrad(String),

    /// Configuration values that violate an invariant of the experiment setup.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Dataset construction or validation failure.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Checkpoint file parsing or consistency failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Stored content digest does not match recomputed bytes.
    #[error("content digest mismatch for {path}: manifest records {expected}, recomputed {actual}")]
    DigestMismatch {
        path: String,
        expected: String,
        actual: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, message: impl Into<String>) -> Self {
        Error::Shape {
            op,
            message: message.into(),
        }
    }
}
