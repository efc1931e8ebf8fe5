use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at step {step}: {what}")]
    Numeric { step: usize, what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("environment protocol violation: {0}")]
    Protocol(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("training diverged at update {update}: {reason}")]
    Diverged { update: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
