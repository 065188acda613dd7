//! Optimizer, training loop and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod inference;
pub mod metrics;
pub mod optim;
pub mod trainer;

use crate::encoders::ModelParams;
use crate::objectives::TeacherState;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{LossMode, SamplingConfig, TrainConfig};
pub use metrics::{MetricsLog, StepMetrics};
pub use optim::{adamw_step, lr_schedule, AdamState, AdamWHyper};
pub use trainer::Trainer;

/// Everything a checkpoint stores: enough to resume bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub student: ModelParams<f32>,
    pub teacher: TeacherState<f32>,
    pub adam: AdamState,
}
