//! Egocentric 3D visual span toolkit.
//!
//! The crate lifts SLAM-style semidense keypoint streams plus gaze and head
//! pose trajectories into multi-level volumetric visual-span grids, builds
//! sliding-window forecasting samples from them, trains a small volumetric
//! forecaster, and scores predictions in 3D and back-projected 2D.
//!
//! Pipeline stages map onto modules:
//!
//! * [`geom`] — SE(3) pose algebra, stream alignment, keypoint selection and
//!   gaze-cone classification.
//! * [`voxel`] — bit-packed occupancy grids and multi-level span assembly.
//! * [`synth`] — deterministic synthetic scene/behavior generator with exact
//!   ground-truth span labels.
//! * [`dataset`] — stream ingestion, sliding-window sample construction,
//!   splits, and the binary sample archive.
//! * [`forecaster`] — the volumetric encoder/transformer/decoder network,
//!   losses, training, checkpoints and non-learned baselines.
//! * [`eval`] — per-level IoU/F1 metrics, foveal distance statistics and 2D
//!   gaze back-projection.
//! * [`latency`] — the staged latency benchmark harness.

pub mod archive;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod forecaster;
pub mod geom;
pub mod latency;
pub mod synth;
pub mod voxel;

pub use error::{Error, Result};
pub use geom::{FrameBundle, GazeSample, Keypoint, Pose, SpanConfig, SpanLevel};
pub use voxel::{MultiLevelSpan, OccupancyGrid};
