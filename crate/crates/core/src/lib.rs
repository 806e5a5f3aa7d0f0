//! Traversability ground-truth generation from LiDAR scans and robot
//! trajectories: aggregation, surface reconstruction, geometric features,
//! trajectory-guided labelling and occupancy/class IoU evaluation.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod eval;
pub mod features;
pub mod formats;
pub mod geom;
pub mod ingest;
pub mod kdtree;
pub mod label;
pub mod pipeline;
pub mod ply;
pub mod surface;
pub mod synth;

pub use geom::{Pose, TravLabel, Vec3, VoxelGridSpec};
