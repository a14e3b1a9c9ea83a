//! Pansharpening with a cross-modulation transformer: a self-contained,
//! desk-scale implementation built on a minimal reverse-mode autodiff
//! tensor core.
//!
//! The crate is organized around the processing pipeline:
//!
//! - [`tensor`], [`rng`], [`graph`] — dense f64 tensors, seeded randomness,
//!   and the differentiation tape every trainable operation runs on.
//! - [`transforms`] — 2D DFT and orthonormal Haar DWT (plus inverses).
//! - [`attention`] — cross-modulation multi-head self-attention, the DFFN,
//!   and the CMAB block.
//! - [`model`] — the full network: extraction, bilateral modulation,
//!   aggregation, residual upsampling; ablation variants V1–V3.
//! - [`loss`] — hybrid spatial + Fourier + wavelet objective.
//! - [`data`] — synthetic scenes, Wald-protocol degradation, sample assembly.
//! - [`storage`] — bit-exact on-disk dataset/checkpoint format.
//! - [`metrics`] — SAM, ERGAS, Q2n, D_lambda, D_s, HQNR and report emission.
//! - [`trainer`] — Adam, the training/eval loops, and the gradient checker.

pub mod attention;
pub mod data;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod storage;
pub mod tensor;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::Tensor;
