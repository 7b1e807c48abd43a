use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("signal error: {0}")]
    Signal(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("fingerprint mismatch: tokens were produced by model {found:016x}, this model is {expected:016x}")]
    Fingerprint { expected: u64, found: u64 },
    #[error("task error: {0}")]
    Task(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
