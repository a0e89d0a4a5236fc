//! Stage-wise optimization: backbone pretraining, per-module fine-tuning
//! with frozen prefixes, fusion-head training, checkpoints.

pub mod checkpoint;
pub mod data;
pub mod sgd;
pub mod stages;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{identity_labels, load_split, LoadedSet};
pub use sgd::Sgd;
pub use stages::{LossSpec, TrainState};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] crate::datakit::DataError),
    #[error(transparent)]
    Net(#[from] crate::hpnet::NetError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("training diverged (non-finite loss) in {stage} epoch {epoch}")]
    Diverged { stage: String, epoch: usize },
    #[error("stage order violation: {0}")]
    StageOrder(String),
    #[error("loss spec error: {0}")]
    Spec(String),
}

pub type Result<V> = std::result::Result<V, TrainError>;

/// Per-stage optimization knobs. The learning rate decays by `lr_decay`
/// each epoch (step schedule).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StageHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    /// Attribute-loss weighting temperature (sigma).
    pub sigma: f64,
}

impl Default for StageHyper {
    fn default() -> Self {
        StageHyper {
            epochs: 3,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
            lr_decay: 0.5,
            sigma: 1.0,
        }
    }
}

/// One JSON-lines training-log record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub seed: u64,
    pub wall_ms: u64,
}
