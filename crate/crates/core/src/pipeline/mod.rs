//! Frame-embedding generator: backbones, local/relation/object/mixture
//! networks, the composite losses, and the staged training driver.

mod augment;
mod dataset;
mod eval;
mod losses;
mod model;
mod train;

use thiserror::Error;

pub use augment::{augment_patch, AugmentConfig};
pub use dataset::{Batch, DatasetConfig, EpisodeSpan, FrameDataset, FrameSample};
pub use eval::{confusion_csv, evaluate, EvalReport};
pub use losses::{composite_frame_loss, composite_local_loss, loss_action_frame, loss_local, loss_object, LossWeights};
pub use model::{
    Backbone, BatchInput, ClassCounts, CurvatureVariant, Generator, GeneratorOutput, LocalNet, LocalOutput, MixtureNet,
    ModelConfig, ObjectNet, RelationNet,
};
pub use train::{
    frame_embeddings, generator_metadata, load_generator, load_temporal, temporal_metadata, MetricsLog, MetricsRow,
    Stage, StageConfig, Stages, TrainConfig, Trainer, METRICS_HEADER,
};

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss in stage {stage} epoch {epoch}: {detail}")]
    NonFiniteLoss {
        stage: String,
        epoch: usize,
        detail: String,
    },
    #[error("stage `{needed}` must complete before `{requested}`")]
    MissingStage { needed: String, requested: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Detection(#[from] crate::detection::DetectionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
