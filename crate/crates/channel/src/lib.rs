//! Physical layer: AWGN channel, ideal capacity gate, Gray 16QAM and
//! LDPC coding with sum-product decoding.

pub mod ber;
pub mod channel;
mod error;
pub mod ldpc;
pub mod qam;

pub use channel::{capacity_gate, capacity_per_use, transmit, ChannelConfig, ChannelMode, FrameStatus, Transmission};
pub use error::{ChannelError, Result};
pub use ldpc::{DecodeOutcome, LdpcCode};
pub use num_complex::Complex64;
