//! Two-stage pre-training: target alignment, optimization, checkpoints and
//! hidden-layer relabeling.

mod adam;
mod checkpoint;
mod config;
mod data;
mod extract;
mod pretrain;
mod targets;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use config::{FrameVariant, Stage, Stage2Mode, StagePlan, TrainConfig};
pub use data::{model_inputs, stage1_examples, stage2_examples, TrainUtt};
pub use extract::{extract_hidden, relabel, Relabeled};
pub use pretrain::{
    evaluate, pretrain, unigram_baseline, EvalMetrics, PretrainOutputs, StepMetrics, Trainer,
    METRICS_HEADER,
};
pub use targets::make_targets;

pub use crate::model::LossKind;
