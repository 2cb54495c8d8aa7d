//! Point-cloud semantic segmentation built from kernel-point convolution,
//! local/global self-attention encoders and a boundary-weighted
//! cross-entropy loss.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: voxel subsampling, radius/k-nearest neighbour search,
//!   sphere crops, upsample maps and kernel-point dispositions.
//! - [`autodiff`]: a small dense-array graph with reverse-mode gradients and
//!   a finite-difference checker.
//! - [`layers`]: convolution, attention, encoder/decoder blocks and the full
//!   network.
//! - [`loss`]: PGA scores and weights, weighted cross-entropy, IoU reports.
//! - [`data`]: SemanticKITTI readers, synthetic scenes, PLY export.
//! - [`gradsuite`]: finite-difference checks of every op and block.
//! - [`train`]: configuration, optimiser, training loop, voting inference,
//!   ablations and checkpoints.
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is on
//! (the default) and fall back to plain iterators otherwise. Results are
//! identical either way.

pub mod autodiff;
pub mod data;
mod error;
pub mod geometry;
pub mod gradsuite;
pub mod layers;
pub mod loss;
pub mod par;
pub mod train;

pub use error::{Error, Result};
