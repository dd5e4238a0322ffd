//! Deterministic multi-view reconstruction from a structure-from-motion prior.
//!
//! The crate takes a COLMAP sparse model and a source of dense depth
//! predictions and turns them into fused 3D geometry:
//!
//! 1. [`geometry`] projects the sparse point cloud into every view.
//! 2. [`conditioning`] trims and expands the per-view depth range, densifies
//!    the sparse depth with inverse-distance KNN and computes the distance map.
//! 3. [`provider`] produces dense depth (from files, from a synthetic oracle,
//!    or from the conditioning itself) and combines ensembles by median.
//! 4. [`alignment`] fits a robust scale/shift model against the sparse depth.
//! 5. [`fusion`] integrates aligned depth into a TSDF volume and extracts a
//!    mesh, or fuses a consistency-filtered point cloud.
//! 6. [`evaluation`] scores the result with Chamfer distance, F-score and
//!    depth RMSE.
//!
//! [`synthscene`] generates analytic scenes with exact ground truth, and
//! [`pipeline`] wires the stages together with on-disk intermediates.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod colmap;
pub mod conditioning;
pub mod depth;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod provider;
pub mod raster;
pub mod spatial;
pub mod synthscene;

pub use error::{Error, Result};
pub use raster::Grid;
