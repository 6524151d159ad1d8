//! Learning data association from the Kalman marginal likelihood.
//!
//! A small network predicts per-step assignment scores, a log-domain
//! Sinkhorn operator relaxes them to doubly stochastic matrices, and a
//! differentiable Kalman filter scores the resulting associations by the
//! marginal likelihood of the observations. Gradients flow back through the
//! filter and Sinkhorn into the network, so it learns to associate without
//! labels.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod autodiff;
pub mod datagen;
mod error;
pub mod eval;
pub mod kalman;
pub mod linalg;
mod math;
pub mod model;
pub mod network;
pub mod sinkhorn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
