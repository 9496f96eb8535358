use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: String },
    #[error("graph input `{0}` is not bound")]
    UnboundInput(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("loss must be a scalar, got shape {0:?}")]
    LossNotScalar(Vec<usize>),
    #[error("missing gradient for active parameter `{0}`")]
    MissingGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        AutodiffError::ShapeMismatch { op, detail }
    }
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
