//! Minimal reverse-mode automatic differentiation over NHWC `f32` tensors.
//!
//! Graphs are static: build once, then call [`Graph::forward`] and
//! [`Graph::backward`] per batch.

mod error;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{CustomOp, Gradients, Graph, NodeId, Op, GDN_BETA_MIN};
pub use optim::{Optimizer, OptimizerState};
pub use params::{uniform_init, ModelParams, Param, CHECKPOINT_MAGIC};
pub use tensor::Tensor;
