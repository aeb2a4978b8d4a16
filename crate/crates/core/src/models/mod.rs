//! Network architectures, inputs and targets, training and prediction.

pub mod arch;
pub mod data;
pub mod features;
pub mod predict;
pub mod targets;
pub mod train;

pub use arch::{
    build_mlp, build_multitask_cnn, build_right_path_cnn, build_sequential_cnn, ConvStage, MlpBaselineSpec, ModelKind,
    ModelSpec, MultiTaskCnnSpec, SequentialCnnSpec, NUM_STATES,
};
pub use data::{Batch, DataConfig, InMemorySet, PreparedSeries, TrainingSet, WindowRef, WindowSet};
pub use features::{engineer_features, features_from_values, NUM_FEATURES};
pub use predict::Model;
pub use targets::{make_mtl_targets, MtlTarget};
pub use train::{evaluate, train, Evaluation, TrainConfig, TrainOutcome};
