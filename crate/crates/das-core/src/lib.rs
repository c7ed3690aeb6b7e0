//! Differentiable architecture search for convolutional PolSAR patch
//! classifiers: a small f64 tensor engine with reverse-mode gradients,
//! sparsemax mixing, real- and complex-valued layers, a two-phase
//! kernel/depth search, and synthetic coherency-matrix data tooling.

pub mod complex;
pub mod config;
pub mod data;
pub mod error;
pub(crate) mod fileio;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod search;
pub mod space;
pub mod sparsemax;
pub mod tensor;

pub use error::{DasError, Result};
