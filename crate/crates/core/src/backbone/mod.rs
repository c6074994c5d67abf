//! Network description, the binary backbone's forward/backward passes,
//! stage-1 training, feature extraction and hybrid inference.

mod checkpoint;
mod layers;
mod model;
mod spec;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::write_atomic;
pub use layers::ModelOptions;
pub use model::{argmax, Buffer, Network};
pub use spec::{Chw, LayerSpec, NetworkSpec};
pub use train::{
    accuracy, confusion, cosine_lr, evaluate_fc, extract_features, fc_logits, infer_hybrid, train_stage1,
    EpochMetrics, TrainConfig, TrainOutcome,
};
