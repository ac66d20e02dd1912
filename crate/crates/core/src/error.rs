use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: need more than {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("integration diverged: non-finite state after step of size {dt}")]
    IntegrationDiverged { dt: f64 },

    #[error("variance undefined: at least 2 mini-batches are required, got {0}")]
    VarianceUndefined(usize),

    #[error("chain diverged at step {step}: {reason}")]
    ChainDiverged { step: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
