//! Arbitrary-scale super-resolution for medical images.
//!
//! A single generator serves every magnification in `(1, 4]`: a residual
//! feature extractor runs at LR resolution and a meta-upscale module predicts
//! one kernel per output pixel from its sub-pixel offset and the scale.
//! Around it sit the degradation pipeline, the adversarial and perceptual
//! objectives, PSNR/SSIM/FID, a two-phase training engine with bit-exact
//! resume, and a scale-sweep evaluation harness.

pub mod archive;
pub mod autograd;
pub mod config;
pub mod critic;
pub mod data;
pub mod error;
pub mod eval;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod run;
pub mod scale;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
