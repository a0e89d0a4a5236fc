//! Attribute-recognition and re-identification metrics with JSON reports.

pub mod attributes;
pub mod eval;
pub mod reid;

pub use attributes::{instance_metrics, mean_accuracy, AttributePredictions};
pub use eval::{
    evaluate_attributes, evaluate_reid, extract_embeddings, read_embeddings, write_embeddings,
    DEFAULT_RANKS, DEFAULT_TRIALS,
};
pub use reid::{cmc_single_query, cosine_similarity, ReidSet};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Net(#[from] crate::hpnet::NetError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Data(#[from] crate::datakit::DataError),
}

pub type Result<V> = std::result::Result<V, MetricsError>;

/// One evaluation run, serialized as JSON. Attribute runs leave `cmc` empty;
/// reid runs leave the attribute fields at 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    #[serde(rename = "mA")]
    pub m_a: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cmc: BTreeMap<String, f64>,
    pub trials: usize,
    pub seed: u64,
}
