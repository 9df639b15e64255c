use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid machine state: {0}")]
    State(String),
    #[error("model load failed: {0}")]
    Load(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("simulator fault at cycle {cycle} in {state}: {detail}")]
    Fault {
        cycle: u64,
        state: String,
        detail: String,
    },
    #[error(transparent)]
    Core(#[from] scgnn_core::Error),
    #[error("trace sink: {0}")]
    Trace(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
