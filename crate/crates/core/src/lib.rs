//! Multi-input (RGB + silhouette) convolutional classifier for healthy vs.
//! defective fruit.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, a SplitMix64 PRNG, numeric kernels, a
//!   reverse-mode tape and a finite-difference gradient checker.
//! * [`nn`]: inverted residual / VGG-style backbones, the two-branch fusion
//!   model, the RGB-only baseline and the binary checkpoint format.
//! * [`image`] and [`silhouette`]: PNM images and the classical
//!   segmentation pipeline that turns an RGB photo into a silhouette.
//! * [`dataset`]: manifests, stratified splitting, batch loading and a
//!   synthetic corpus generator.
//! * [`train`]: Adam, the training loop with best-epoch selection,
//!   confusion matrices and comparison reports.

pub mod dataset;
pub mod error;
pub mod image;
pub mod nn;
pub mod silhouette;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
