//! Learned hyperprior image codec with entropy coding, a channel-facing
//! bitstream container and the two-step training procedure.

pub mod campaign;
pub mod codec;
pub mod container;
pub mod data;
pub mod entropy;
mod error;
pub mod metrics;
pub mod pipeline;
pub mod quant;
pub mod rc;
pub mod train;

pub use codec::{CodecConfig, CodecModel};
pub use error::{CoreError, Result};
