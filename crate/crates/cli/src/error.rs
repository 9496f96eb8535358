use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dsscc_core::CoreError),
    #[error(transparent)]
    Channel(#[from] dsscc_channel::ChannelError),
    #[error(transparent)]
    Theory(#[from] dsscc_theory::TheoryError),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
    /// The frame did not survive the channel.
    #[error("frame lost in transmission: {0}")]
    Lost(String),
    #[error("check failed")]
    CheckFailed,
}

pub type Result<T> = std::result::Result<T, CliError>;
