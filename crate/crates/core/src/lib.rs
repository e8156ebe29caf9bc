//! latentlab: a desk-scale learned-image-compression laboratory.
//!
//! The crate trains a miniature hyperprior codec on synthetic corpora,
//! range-codes real bitstreams, and refines latents at compression time
//! (BLR, HLR, distribution-regularized refinement and a bits-back-style
//! variant) with full entropy accounting.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32`/`f64`);
//! the aliases below pin the `f64` instantiation used by the pipeline,
//! checkpoints and bitstreams.

pub mod autodiff;
pub mod coder;
pub mod corpus;
pub mod model;
pub mod error;
pub mod rng;
pub mod scalar;
pub mod tensor;

#[cfg(test)]
mod corpus_tests;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Pipeline scalar type.
pub type F = f64;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = autodiff::Tape<f32>;
