//! Sparse-transformer MIL pooling.
//!
//! The crate is `no_std` (with `alloc`) and holds the numerical core:
//!
//! * [`patterns`]: Snuffy sparsity patterns, the universal-approximation
//!   condition checks and the layer-count concentration simulation.
//! * [`attention`]: sparse multi-head attention, pre-norm transformer blocks
//!   and a dense masked reference implementation.
//! * [`pooling`]: the dual-branch MIL pooling head (max-pooling instance
//!   classifier plus sparse-attention readout) and the mean/max baselines.
//! * [`training`]: loss, exact reverse-mode gradients, a finite-difference
//!   checker, AdamW and the early-stopping training loop.
//! * [`metrics`]: accuracy, ROC-AUC and expected calibration error.
//! * [`data`]: bags, datasets, normalization, synthetic bags and CV plans.
//!
//! File formats, dataset loaders and the experiment CLI live in the `snuffy`
//! companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod data;
mod error;
pub mod linalg;
pub mod metrics;
pub mod patterns;
pub mod pooling;
pub mod rng;
pub mod training;

pub use crate::error::{Error, Result};
pub use crate::linalg::Matrix;
