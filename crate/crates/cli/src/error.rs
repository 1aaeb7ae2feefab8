use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad preconditioner spec {spec:?}: {reason}")]
    PrecondSpec { spec: String, reason: String },
    #[error("bad seed list {0:?}")]
    Seeds(String),
    #[error("bad schedule {0:?}")]
    Schedule(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("config file: {0}")]
    ConfigFile(#[from] toml::de::Error),
    #[error(transparent)]
    Psgd(#[from] psgd_core::PsgdError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
