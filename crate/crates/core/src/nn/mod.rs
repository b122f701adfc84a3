//! Minimal differentiable tensor core.
//!
//! A tape-based reverse-mode autodiff graph over dense row-major
//! tensors, generic over the scalar type (`f32` for training, `f64`
//! for finite-difference gradient checks), plus the layer set the
//! segmentation stages need: convolution, batch norm, activations,
//! bilinear upsampling, linear/attention primitives, and AdamW with a
//! linear learning-rate schedule.

pub mod graph;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use params::{BnState, BnStore, ParamId, ParamStore, Session};
pub use scalar::Scalar;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got {0} elements")]
    NotScalar(usize),
    #[error("channel index {index} out of range for {channels} channels")]
    IndexOutOfRange { index: usize, channels: usize },
    #[error("model width {width} not divisible by {heads} heads")]
    HeadsDontDivide { width: usize, heads: usize },
    #[error("epoch {epoch} out of range 0..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
}
