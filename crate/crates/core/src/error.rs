use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token {token} at batch position {position} is out of range for n = {n}")]
    TokenOutOfRange { position: usize, token: u64, n: usize },
    #[error("index map location {location} at flat position {position} exceeds memory size {memory_size}")]
    CorruptIndexMap { position: usize, location: usize, memory_size: usize },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
