use thiserror::Error;

pub type Result<T> = std::result::Result<T, MudalError>;

#[derive(Debug, Error)]
pub enum MudalError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("activation trace is stale (recorded at revision {trace}, network is at {net})")]
    StaleTrace { trace: u64, net: u64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed IDX file at byte {offset}: {msg}")]
    Idx { offset: u64, msg: String },
    #[error("pool error: {0}")]
    Pool(String),
    #[error("budget error: {0}")]
    Budget(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing discriminator: {0}")]
    MissingDiscriminator(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MudalError {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        MudalError::Shape {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MudalError::InvalidArgument(msg.into())
    }
}
