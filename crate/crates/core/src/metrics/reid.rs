//! Cosine-ranking re-identification metrics.

use super::{MetricsError, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Embeddings with identity/camera labels, used as probe or gallery pool.
#[derive(Debug, Clone, Default)]
pub struct ReidSet {
    pub embeddings: Vec<Vec<f32>>,
    pub ids: Vec<u32>,
    pub cameras: Vec<u32>,
}

impl ReidSet {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// a.b / (|a||b|); a zero vector compares as 0 to everything (with warning).
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding dims must agree");
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        eprintln!("warning: cosine similarity of a zero vector defined as 0");
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Repeated single-query CMC. Per trial one gallery image is sampled per
/// identity; each probe ranks that gallery by descending cosine similarity
/// (ties keep gallery index order) and scores each rank cutoff by whether
/// its identity appears within it. Averaged over probes and trials.
pub fn cmc_single_query(
    probes: &ReidSet,
    gallery: &ReidSet,
    ranks: &[usize],
    trials: usize,
    seed: u64,
) -> Result<BTreeMap<usize, f64>> {
    if trials == 0 || ranks.is_empty() {
        return Err(MetricsError::Usage("cmc needs trials >= 1 and ranks".into()));
    }
    if probes.is_empty() || gallery.is_empty() {
        return Err(MetricsError::Usage("cmc needs nonempty probe and gallery sets".into()));
    }
    // identity -> gallery indices, in index order
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (idx, &id) in gallery.ids.iter().enumerate() {
        by_id.entry(id).or_default().push(idx);
    }
    for &pid in &probes.ids {
        if !by_id.contains_key(&pid) {
            return Err(MetricsError::Protocol(format!(
                "probe identity {pid} has no gallery image"
            )));
        }
    }
    let hits: Vec<Vec<usize>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_add((t as u64).wrapping_mul(0x9e37_79b9)));
            // one gallery image per identity, single-shot
            let chosen: Vec<usize> = by_id
                .values()
                .map(|idxs| idxs[rng.gen_range(0..idxs.len())])
                .collect();
            let mut trial_hits = vec![0usize; ranks.len()];
            for (p, &pid) in probes.embeddings.iter().zip(&probes.ids) {
                let mut scored: Vec<(usize, f64)> = chosen
                    .iter()
                    .map(|&g| (g, cosine_similarity(p, &gallery.embeddings[g])))
                    .collect();
                // stable sort: equal similarities keep gallery index order
                scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite similarities"));
                let position = scored
                    .iter()
                    .position(|&(g, _)| gallery.ids[g] == pid)
                    .expect("every identity sampled once")
                    + 1;
                for (h, &r) in trial_hits.iter_mut().zip(ranks) {
                    *h += (position <= r) as usize;
                }
            }
            trial_hits
        })
        .collect();
    let denom = (probes.len() * trials) as f64;
    let mut out = BTreeMap::new();
    for (ri, &r) in ranks.iter().enumerate() {
        let total: usize = hits.iter().map(|t| t[ri]).sum();
        out.insert(r, total as f64 / denom);
    }
    Ok(out)
}
