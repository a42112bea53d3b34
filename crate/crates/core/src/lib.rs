//! Class activation mapping for semantic segmentation, with a
//! perturbation and entropy based benchmark for judging explanations.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`], [`ops`]: dense f64 tensors and the numeric kernels.
//! - [`graph`]: a taped reverse-mode graph with named taps.
//! - [`segnet`]: a small encoder-decoder segmentation network and its trainer.
//! - [`cam`]: six saliency methods that explain a region of the output.
//! - [`eval`]: thresholds, perturbations, entropy and the dataset benchmark.
//! - [`data`]: synthetic scenes, netpbm IO and overlays.

pub mod cam;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod pixels;
pub mod segnet;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
