//! Direction-of-arrival estimation benchmark core.
//!
//! The crate synthesizes multi-antenna baseband observations from a wideband
//! uniform-linear-array signal model, packages them into labeled
//! classification datasets, and evaluates two estimators against each other:
//! a from-scratch micro-CNN classifier (trainable at 64-bit, evaluable at
//! 64/32-bit and post-training-quantized INT8 word lengths) and a MUSIC
//! subspace baseline. Cost accounting (multiply-accumulate counts, flash and
//! RAM footprints) accompanies every word length.
//!
//! Modules follow the processing chain:
//!
//! - [`signal`]: array geometry, steering vectors, band synthesis, AWGN
//! - [`dataset`]: labeled dataset generation, splits, tensor packing, DOAF container
//! - [`music`]: sample covariance, Hermitian eigendecomposition, pseudo-spectrum
//! - [`nn`]: tensors, layers, backprop, Adam, training loop
//! - [`quant`]: INT8 calibration/quantization, integer inference, cost reports
//! - [`model_io`]: DOAM model container for all word lengths

pub mod dataset;
pub mod error;
pub mod model_io;
pub mod music;
pub mod nn;
pub mod quant;
pub mod seed;
pub mod signal;

pub use error::{Error, Result};
