//! Validation of robot cockpit interactions from force, torque and pose
//! recordings.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the concrete instantiations used across the toolkit.

pub mod analysis;
pub mod augment;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod record;
pub mod render;
pub mod scalar;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
