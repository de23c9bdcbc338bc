//! Synapse detection for large anisotropic electron-microscopy volumes.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! 1. [`vesicle`] finds vesicle centroids with a normalized matched filter,
//!    non-maximum suppression and a neighbour-count cluster rule.
//! 2. [`features`] computes ten per-voxel channels: 2D transforms per slice,
//!    summarized by 3D box kernels, plus distance to the nearest vesicle.
//! 3. [`forest`] trains a random forest on balanced, membrane-restricted
//!    samples and predicts a probability for every membrane voxel.
//! 4. [`fusion`] turns probabilities into 3D objects with size and slice
//!    persistence filters.
//! 5. [`eval`] scores objects against ground truth with one-to-one matching
//!    and sweeps fusion parameters into precision-recall curves.
//!
//! [`blocks`] runs stages 1–4 over padded blocks for volumes that do not fit
//! in memory, and [`synth`] generates phantoms with known ground truth.

pub mod atomic;
pub mod blocks;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod fusion;
pub mod hash;
pub mod synth;
pub mod vesicle;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{AnyVolume, BoundingBox, Dims, MembraneMask, Resolution, Volume};
