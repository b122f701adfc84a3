//! Multi-label segmentation of videofluoroscopy frames.
//!
//! The pipeline couples a learnable ensemble of classical X-ray
//! enhancement algorithms with a cascade of transformer-UNet
//! segmentation stages, trained end to end with per-region Dice
//! losses. A synthetic translucent-phantom generator stands in for
//! clinical data so the whole system is testable at desk scale.
//!
//! The tensor core is generic over the scalar type; the crate root
//! exposes `f32` aliases for training and `f64` aliases for
//! finite-difference verification.

pub mod cin;
pub mod data;
pub mod gradcam;
pub mod imgproc;
pub mod losses;
pub mod nn;
pub mod pen;
pub mod region;
pub mod trainer;
pub mod viz;

pub use nn::{Scalar, Tensor};
pub use region::{Region, NUM_REGIONS};

/// Training-precision tensor.
pub type Tensor32 = nn::Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = nn::Tensor<f64>;
pub type Graph32 = nn::Graph<f32>;
pub type Graph64 = nn::Graph<f64>;
