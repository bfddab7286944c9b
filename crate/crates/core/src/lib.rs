//! Two-network cell segmentation with learned preprocessing filters and a
//! learned point-wise ensemble, built on a small reverse-mode autodiff core.

pub mod adam;
pub mod autograd;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod metrics;
pub mod tensor;
pub mod train;
pub mod translation;
pub mod unet;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use autograd::{Graph, Var};
pub use data::{
    export_heatmap, load_dataset, load_pairs, make_batch, synth_dataset, synth_scene,
    write_dataset, ClassColormap, Sample, SynthSpec,
};
pub use ensemble::{ensemble_mix, fixed_weights, stack_outputs, EnsembleWeights};
pub use error::{Error, Result};
pub use export::export_filters;
pub use gradcheck::{gradcheck, op_suite, pipeline_check, CheckResult, GradcheckReport};
pub use metrics::{
    argmax_labels, confusion_accumulate, holdout_split, kfold_split, metrics_from_confusion,
    split_hash, total_loss, ConfusionMatrix, Fold, FoldSummary, LossReport, MetricsReport,
};
pub use tensor::{LabelMap, Scalar, Tensor};
pub use train::{
    ablate, evaluate, resume, train, AblationConfig, AblationReport, Arm, Checkpoint, EnsembleMode,
    EpochRecord, ModelKind, TrainConfig, TrainOutcome,
};
pub use translation::{make_translated, pipeline_forward, Pipeline, PipelineOutputs, SigmoidOn};
pub use unet::{build_unet, count_params, unet_forward, ParamSet, UNet, UNetConfig};
