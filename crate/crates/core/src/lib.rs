//! Single-photon LiDAR simulation and probabilistic point cloud processing.
//!
//! The crate covers the full pipeline from synthetic scenes to evaluated
//! point clouds:
//!
//! - [`scene`]: procedural depth/albedo ground truth through a pinhole
//!   camera, with binary map files.
//! - [`spad`]: the forward sensing model — expected photon flux per timing
//!   bin, SBR calibration, and Poisson histogram simulation with
//!   order-independent per-pixel random streams.
//! - [`histogram`]: matched filtering, peak detection with minimum-height
//!   gating, the per-pixel probability attribute, peak-height thresholding,
//!   spatial Gaussian denoising, and truncated-Fourier compression.
//! - [`cloud`]: probabilistic point clouds (points carrying a probability
//!   attribute and pixel provenance) and their PLY dialect.
//! - [`spatial`]: grid-backed ball queries, neighbor probability density
//!   (NPD) scoring and filtering, and farthest (probable) point sampling.
//! - [`eval`]: ground-truth labeling, precision/recall of filtering, score
//!   distributions, keypoint purity, and stage benchmarking.

// Validation guards are written `!(x > 0.0)` so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod eval;
pub mod histogram;
pub mod rng;
pub mod scene;
pub mod spad;
pub mod spatial;

mod binio;
mod error;

pub use error::{Error, Result};
