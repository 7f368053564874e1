use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("id {id} out of range for {kind} space of cardinality {cardinality}")]
    IndexOutOfRange {
        id: u32,
        kind: &'static str,
        cardinality: u32,
    },
    #[error("attempted to update a frozen embedding table")]
    FrozenViolation,
    #[error("non-finite value encountered: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("corrupt dataset file: {0}")]
    CorruptDataset(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
