//! Differentially private dataset distillation by gradient matching.
//!
//! The core loop trains a small synthetic labeled set so that network
//! gradients computed on it match noise-sanitized gradients computed on the
//! real data. The synthetic set is the only artifact that leaves the
//! privacy boundary; model training on it is post-processing.

pub mod continual;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod nn;
pub mod privacy;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Dual, Scalar};
pub use tensor::Tensor;
