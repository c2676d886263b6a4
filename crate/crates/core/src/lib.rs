//! Learning with missing modalities.
//!
//! Per-modality encoders map raw inputs to a shared latent width. Patients in
//! a batch are compared through task-guided deep kernels, the per-modality
//! similarities are fused under presence masks and a learnable threshold,
//! and a two-layer graph convolution over the fused graph supplies
//! neighbour information that imputes missing modalities (and enhances the
//! present ones) before a transformer fuses all modality tokens into a
//! multi-label prediction.
//!
//! The crate is `no_std` + `alloc`: it carries the numerics, the synthetic
//! data generator and the evaluation protocols. File formats and the
//! command-line interface live in the `modalmend` crate.

#![no_std]
#![allow(clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod imputation;
pub mod interaction;
pub mod intuition;
pub mod kernel;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod similarity;
pub mod tensor;
pub mod training;
#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use config::{EvalConfig, ExperimentConfig, ModelConfig, Protocol, TokenMode, TrainConfig};
pub use data::{Batch, Dataset, ModalityBatch, ModalityKind};
pub use error::{Error, Result};
pub use model::{Model, ModelVariant};
pub use tensor::{Graph, Tensor, Var};
