//! Training, evaluation, checkpoints and the ablation harness.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod model;
pub mod trainer;

pub use ablation::{ablate, AblationConfig, AblationReport, Arm, RunResult};
pub use checkpoint::Checkpoint;
pub use config::{EnsembleMode, ModelKind, TrainConfig};
pub use model::Model;
pub use trainer::{
    check_classes, evaluate, evaluate_confusion, resume, train, train_epoch, EpochRecord,
    TrainOutcome,
};
