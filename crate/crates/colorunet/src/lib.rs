//! Colorization toolkit that treats color prediction as per-pixel
//! classification: chrominance is discretized into a small set of
//! representative colors, a convolutional encoder-decoder predicts a
//! distribution over that set for every pixel, and decoding interpolates
//! between the distribution's mean and its mode with an annealing
//! temperature. A temporal smoothing pass extends single-image predictions
//! to video without retraining.
//!
//! The crate is self-contained: the network, its gradients, and the
//! optimizer are implemented here directly on top of `ndarray`.

pub mod cli;
pub mod colorspace;
pub mod datapipe;
pub mod decoder;
pub mod discretizer;
mod error;
mod fmtio;
pub mod nn;
pub mod render;
pub mod unet;
pub mod video;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
