use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("frame of {bits} bits exceeds capacity {capacity:.3} bits over {uses} channel uses")]
    FrameRejected { bits: u64, uses: u64, capacity: f64 },
    #[error("frame corrupt: {0}")]
    FrameCorrupt(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid parity-check matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid channel configuration: {0}")]
    InvalidConfig(String),
    #[error("alist parse error at line {line}: {msg}")]
    Alist { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ChannelError> = std::result::Result<T, E>;
