//! The span forecasting network and its training machinery.
//!
//! The differentiable core is a small in-repo reverse-mode tape over dense
//! f64 tensors; at desk scale (R = 16 grids, tens of channels) this keeps
//! every gradient testable against finite differences without an external
//! ML runtime.

pub mod baselines;
pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod tape;
pub mod train;

pub use baselines::{baseline_global_prior, baseline_persistence, GlobalPrior};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{Forecast, Forecaster, LossKind, ModelConfig, SampleInput, VariantFlags};
pub use tape::{Tape, Tensor};
pub use train::{train, EpochStats, LrSchedule, OptimizerSpec, TrainReport};
