//! Head pose estimation with Bernoulli angle heatmaps.
//!
//! A fully convolutional multiscale network predicts, per pixel, the three
//! head angles (pitch, yaw, roll) inside a disc around the head, plus a
//! Gaussian confidence map centered on the head. Decoding takes the
//! confidence-weighted mean of the angle maps over the confident pixels.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). Training
//! defaults to `f32`; the gradient checks run in `f64`.

pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod net;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type Network64 = net::Network<f64>;
pub type Network32 = net::Network<f32>;
