use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid toy model: {0}")]
    InvalidModel(String),
    #[error("integration failed: {0}")]
    Integration(String),
}

pub type Result<T, E = TheoryError> = std::result::Result<T, E>;
