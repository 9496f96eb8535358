use dsscc_autodiff::AutodiffError;
use dsscc_channel::ChannelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("sigma {sigma} below floor {floor}")]
    SigmaBelowFloor { sigma: f64, floor: f64 },
    #[error("factorized density is not strictly increasing in channel {channel}")]
    NotMonotone { channel: usize },
    #[error("symbol range too wide: [{min}, {max}]")]
    RangeOverflow { min: i64, max: i64 },
    #[error("invalid cdf table: {0}")]
    InvalidTable(String),
    #[error("bitstream format: {0}")]
    Format(String),
    #[error("corrupt frame: {0}")]
    FrameCorrupt(String),
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("label {0} out of range")]
    BadLabel(u8),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
