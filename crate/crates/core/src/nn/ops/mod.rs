//! Differentiable primitive ops, implemented as methods on
//! [`crate::nn::Graph`]. Each op pushes one tape node with its
//! backward rule.

mod conv;
mod elementwise;
pub(crate) mod linalg;
mod linear;
mod norm;
mod resample;
mod shape;

pub use conv::conv_out_dim;
