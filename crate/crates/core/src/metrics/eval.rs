//! Whole-split evaluation and embedding dumps.

use super::attributes::{instance_metrics, mean_accuracy, AttributePredictions};
use super::reid::{cmc_single_query, ReidSet};
use super::{MetricsError, MetricsReport, Result};
use crate::datakit::atomic_write;
use crate::hpnet::{HpNet, Task, TrainMode};
use crate::tensor::{no_grad, ops, Tensor};
use crate::trainer::LoadedSet;
use std::path::{Path, PathBuf};

pub const DEFAULT_RANKS: [usize; 4] = [1, 5, 10, 20];
pub const DEFAULT_TRIALS: usize = 100;

fn forward_batches<F>(net: &HpNet, data: &LoadedSet, batch: usize, mut sink: F) -> Result<()>
where
    F: FnMut(&Tensor<f32>, &Tensor<f32>) -> Result<()>,
{
    let mode = TrainMode::eval();
    let idxs: Vec<usize> = (0..data.len()).collect();
    for chunk in idxs.chunks(batch.max(1)) {
        let x = data.batch(chunk);
        let out = no_grad(|| net.forward(&x, &mode))?;
        sink(&out.logits, &out.embedding)?;
    }
    Ok(())
}

/// Threshold sigmoid probabilities at 0.5 and compute the five attribute
/// criteria over one split.
pub fn evaluate_attributes(
    net: &HpNet,
    data: &LoadedSet,
    batch: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if net.config.task != Task::Attributes {
        return Err(MetricsError::Usage(
            "attribute evaluation needs an attribute-task network".into(),
        ));
    }
    if data.num_attributes != net.config.num_attributes {
        return Err(MetricsError::Usage(format!(
            "split has {} attributes, network {}",
            data.num_attributes, net.config.num_attributes
        )));
    }
    let mut probs = Vec::with_capacity(data.len() * data.num_attributes);
    forward_batches(net, data, batch, |logits, _| {
        probs.extend(ops::sigmoid(logits).data().iter().map(|&v| v as f64));
        Ok(())
    })?;
    let labels: Vec<u8> = data.attrs.iter().flatten().copied().collect();
    let preds = AttributePredictions::new(data.len(), data.num_attributes, probs, labels, 0.5)?;
    let m_a = mean_accuracy(&preds)?;
    let (accuracy, precision, recall, f1) = instance_metrics(&preds);
    Ok(MetricsReport {
        task: "attributes".into(),
        m_a,
        accuracy,
        precision,
        recall,
        f1,
        cmc: Default::default(),
        trials: 0,
        seed,
    })
}

/// Extract embeddings for every sample of the split.
pub fn extract_embeddings(net: &HpNet, data: &LoadedSet, batch: usize) -> Result<ReidSet> {
    let mut embeddings = Vec::with_capacity(data.len());
    let d = net.config.feature_dim;
    forward_batches(net, data, batch, |_, emb| {
        for row in emb.data().chunks(d) {
            embeddings.push(row.to_vec());
        }
        Ok(())
    })?;
    Ok(ReidSet {
        embeddings,
        ids: data.ids.clone(),
        cameras: data.cameras.clone(),
    })
}

/// Camera-disjoint protocol over one split: the lowest camera id forms the
/// gallery pool, every other camera the probes. Repeated single-query CMC
/// at the standard rank cutoffs.
pub fn evaluate_reid(
    net: &HpNet,
    data: &LoadedSet,
    batch: usize,
    trials: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if net.config.task != Task::Reid {
        return Err(MetricsError::Usage(
            "reid evaluation needs a reid-task network".into(),
        ));
    }
    let all = extract_embeddings(net, data, batch)?;
    let gallery_cam = *all
        .cameras
        .iter()
        .min()
        .ok_or_else(|| MetricsError::Usage("empty evaluation split".into()))?;
    let mut gallery = ReidSet::default();
    let mut probes = ReidSet::default();
    for i in 0..all.len() {
        let side = if all.cameras[i] == gallery_cam {
            &mut gallery
        } else {
            &mut probes
        };
        side.embeddings.push(all.embeddings[i].clone());
        side.ids.push(all.ids[i]);
        side.cameras.push(all.cameras[i]);
    }
    let cmc = cmc_single_query(&probes, &gallery, &DEFAULT_RANKS, trials, seed)?;
    Ok(MetricsReport {
        task: "reid".into(),
        m_a: 0.0,
        accuracy: 0.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        cmc: cmc.into_iter().map(|(r, v)| (r.to_string(), v)).collect(),
        trials,
        seed,
    })
}

/// Binary embedding dump: count u32, dim u32, then little-endian f32 rows;
/// ids go to a JSON-lines sidecar `<file>.ids.jsonl`.
pub fn write_embeddings(set: &ReidSet, path: &Path) -> Result<PathBuf> {
    let dim = set.embeddings.first().map_or(0, Vec::len);
    let mut bytes = Vec::with_capacity(8 + set.len() * dim * 4);
    bytes.extend_from_slice(&(set.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in &set.embeddings {
        for &v in e {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)?;
    let name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let sidecar = path.with_file_name(format!("{name}.ids.jsonl"));
    let mut text = String::new();
    for (&id, &cam) in set.ids.iter().zip(&set.cameras) {
        text.push_str(&format!("{{\"id\":{id},\"camera\":{cam}}}\n"));
    }
    atomic_write(&sidecar, text.as_bytes())?;
    Ok(sidecar)
}

pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<Vec<f32>>)> {
    let bytes = std::fs::read(path).map_err(crate::datakit::DataError::Io)?;
    if bytes.len() < 8 {
        return Err(MetricsError::Usage("embedding file too short".into()));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + count * dim * 4 {
        return Err(MetricsError::Usage(format!(
            "embedding file length {} does not match {count}x{dim}",
            bytes.len()
        )));
    }
    let rows = bytes[8..]
        .chunks_exact(dim * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((dim, rows))
}
