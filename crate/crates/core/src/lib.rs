//! Surface-defect saliency detection with joint attention-guided feature
//! fusion.
//!
//! The crate implements the full training and evaluation stack for an
//! encoder-decoder saliency network aimed at industrial surface defects:
//!
//! - [`tensor`] and [`autodiff`]: dense NCHW tensors and reverse-mode
//!   differentiation over a recorded operation tape.
//! - [`nn`]: parameter storage plus the convolution and batch-norm layers
//!   the network is assembled from.
//! - [`encoder`]: the five-stage residual encoder.
//! - [`jaff`]: the joint attention-guided feature fusion module used at
//!   every decoder stage.
//! - [`drf`]: the dense receptive field module between encoder and decoder.
//! - [`model`]: the assembled network with deep-supervised side outputs.
//! - [`loss`]: the hybrid BCE + IoU + SSIM objective over all side outputs.
//! - [`metrics`]: MAE, PR/F curves, weighted F-measure, S-measure and
//!   E-measure for saliency maps.
//! - [`data`]: normalization, paired augmentation, salt-and-pepper
//!   corruption and a synthetic defect-image generator.
//! - [`optim`] and [`train`]: Adam and the single training step.
//! - [`gradcheck`]: finite-difference utilities shared by the test suites.
//!
//! The crate is `no_std`-compatible (alloc required): disable the default
//! `std` feature for constrained targets. With `std` enabled the matrix
//! kernels pick SIMD paths via runtime CPU detection, which matters for
//! training throughput.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod drf;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod jaff;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
