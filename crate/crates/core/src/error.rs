use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid product-state spec: {0}")]
    InvalidSpec(String),

    #[error("invalid tripartition: {0}")]
    InvalidPartition(String),

    #[error("gate is not unitary (deviation {0:e})")]
    NonUnitary(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("outcome probability {0:e} is below the conditioning floor")]
    UndefinedConditionalState(f64),

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("run interrupted; resume marker written to {0}")]
    Interrupted(String),

    #[error("malformed ensemble dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
