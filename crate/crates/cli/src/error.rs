use thiserror::Error;

/// Failure of a command. Usage errors exit with status 2, everything else
/// with status 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] scgnn_core::Error),
    #[error(transparent)]
    Sim(#[from] scgnn_sim::SimError),
    #[error(transparent)]
    Link(#[from] scgnn_link::LinkError),
    #[error(transparent)]
    Eval(#[from] scgnn_eval::EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
