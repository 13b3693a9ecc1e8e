//! Imbalanced classification with pure-noise oversampling (OPeN) and
//! distribution-aware routing batch normalization (DAR-BN).
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`layers`], [`optim`]: a small dense-tensor core with
//!   hand-written backward passes and SGD with momentum.
//! * [`norm`]: standard, DAR and auxiliary batch normalization.
//! * [`data`]: datasets, long-tail construction, channel statistics, a
//!   synthetic image generator and the binary dataset format.
//! * [`sampler`]: the balanced oversampling loader and noise injection.
//! * [`model`], [`train`]: the MLP, training loop, evaluation, gradient
//!   probe, additive-noise sweep and checkpoints.

pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod norm;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;
