use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Core(#[from] monkey_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no corpus for dataset `{0}`")]
    MissingCorpus(String),

    #[error("{port} failed: {message}")]
    Port { port: &'static str, message: String },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
