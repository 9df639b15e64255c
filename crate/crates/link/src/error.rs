use thiserror::Error;

use crate::frame::{FrameError, NackReason};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("link closed by peer")]
    Closed,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("device rejected {command}: {reason}")]
    Nack { command: String, reason: NackReason },
    #[error("{command} failed after {attempts} attempts (last: {last})")]
    RetriesExhausted { command: String, attempts: u32, last: String },
    #[error("memory verification failed: expected digest {expected}, device reports {actual}")]
    Verification { expected: String, actual: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
}
