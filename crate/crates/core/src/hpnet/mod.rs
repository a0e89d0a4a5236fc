//! The multi-branch attentive network: backbone column, attention modules,
//! fused embedding, connectivity ablations, and attention-map export.

pub mod config;
pub mod export;
pub mod layers;
pub mod network;

pub use config::{ablation_mask, HpNetConfig, Task, ABLATION_GRID};
pub use export::export_attention;
pub use layers::NamedTensor;
pub use network::{AttentionStack, ForwardOutput, HpNet, TrainMode};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("export to {path}: {msg}")]
    Export { path: PathBuf, msg: String },
}

pub type Result<V> = std::result::Result<V, NetError>;
