//! Cycle-consistent multi-model merging of ReLU MLPs in weight space.
//!
//! The crate covers the full pipeline: Frank-Wolfe permutation matching
//! (pairwise and n-way through a shared universe space), weight-space
//! merging with activation renormalization, loss-barrier and similarity
//! evaluation, deterministic MLP training on synthetic data, and a
//! federated aggregation simulator.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the default 64-bit pipeline.

pub mod error;
pub mod perm;
pub mod scalar;

pub mod evaluation;
pub mod fedsim;
pub mod matching;
pub mod merging;
pub mod model;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default 64-bit model parameters.
pub type Mlp = model::MlpParams<f64>;
/// Default 64-bit dataset.
pub type Data = model::Dataset<f64>;
/// Default 64-bit relaxed permutation.
pub type Soft = perm::DoublyStochastic<f64>;
