//! Checkpoints, per-group transfer plans and the layer-freezing ablation.

pub mod checkpoint;
pub mod plan;
pub mod sweep;

pub use checkpoint::{Checkpoint, SequenceSpec, Standardization, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use plan::{apply_transfer_plan, Directive, Method, TransferPlan, Treatment, DEFAULT_SLOW_MULTIPLIER, HEAD_GROUP};
pub use sweep::{ablation_sweep, sweep_csv, transfer_and_train, SweepConfig, SweepRow};
