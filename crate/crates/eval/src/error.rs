use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed data file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] scgnn_core::Error),
    #[error(transparent)]
    Sim(#[from] scgnn_sim::SimError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
