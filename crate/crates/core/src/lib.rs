//! Sparse-voxel 3D backbone built on window-partitioned linear group RNNs.
//!
//! The pipeline: a point cloud is voxelized into a sparse voxel set
//! ([`voxelgrid`]), serialized into equal-size groups along axis-major window
//! orders ([`windowing`]), and processed by a hierarchy of blocks
//! ([`block`]). Each block interleaves bidirectional linear RNN scans
//! ([`linear_rnn`]) with a sub-manifold convolution descriptor ([`spatial`])
//! and voxel merge/expand down/up-sampling ([`hierarchy`]). Between blocks,
//! high-response foreground voxels are diffused into new zero-feature voxels
//! that the next block fills autoregressively ([`voxelgen`]).
//!
//! [`harness`] provides a synthetic-scene training loop with a minimal BEV
//! heatmap head, plus finite-difference gradient check runners. Everything is
//! plain `f64` on the CPU with hand-written forward and backward passes.

pub mod block;
pub mod config;
pub mod error;
pub mod formats;
pub mod harness;
pub mod hierarchy;
pub mod linalg;
pub mod linear_rnn;
pub mod opt;
pub mod params;
pub mod spatial;
#[cfg(test)]
pub(crate) mod test_util;
pub mod voxelgen;
pub mod voxelgrid;
pub mod windowing;

pub use error::{CoreError, Result};
pub use linalg::Mat;
pub use voxelgrid::{GridGeometry, PointCloud, VoxelSet};
