//! In-memory training/eval sets assembled from a manifest and a split.

use super::Result;
use crate::datakit::{load_image, Manifest, Normalization, SplitAssignment, SplitName};
use crate::tensor::Tensor;
use rayon::prelude::*;
use std::path::Path;

/// One split, fully decoded: image tensors `[3,H,W]` plus labels in the same
/// order as the manifest.
pub struct LoadedSet {
    pub images: Vec<Tensor<f32>>,
    pub attrs: Vec<Vec<u8>>,
    pub ids: Vec<u32>,
    pub cameras: Vec<u32>,
    pub num_attributes: usize,
    pub height: usize,
    pub width: usize,
}

impl LoadedSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stack the selected samples into one `[N,3,H,W]` batch.
    pub fn batch(&self, idxs: &[usize]) -> Tensor<f32> {
        let plane = 3 * self.height * self.width;
        let mut data = Vec::with_capacity(idxs.len() * plane);
        for &i in idxs {
            data.extend_from_slice(&self.images[i].data());
        }
        Tensor::new(vec![idxs.len(), 3, self.height, self.width], data)
    }

    /// Attribute bits of the selected samples, row-major `[N*M]`.
    pub fn batch_attrs(&self, idxs: &[usize]) -> Vec<u8> {
        let mut out = Vec::with_capacity(idxs.len() * self.num_attributes);
        for &i in idxs {
            out.extend_from_slice(&self.attrs[i]);
        }
        out
    }

    /// Per-attribute positive ratio over the whole set.
    pub fn positive_ratios(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.num_attributes];
        for a in &self.attrs {
            for (c, &bit) in counts.iter_mut().zip(a) {
                *c += bit as usize;
            }
        }
        counts
            .iter()
            .map(|&c| c as f64 / self.len().max(1) as f64)
            .collect()
    }
}

/// Dense identity labels `0..K` from raw ids (sorted-unique order), plus K.
pub fn identity_labels(ids: &[u32]) -> (Vec<usize>, usize) {
    let mut unique: Vec<u32> = ids.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let labels = ids
        .iter()
        .map(|id| unique.binary_search(id).expect("id present"))
        .collect();
    (labels, unique.len())
}

/// Decode every image of one split, resized to `(h, w)` and normalized.
/// Paths in the manifest are relative to `root`.
pub fn load_split(
    root: &Path,
    manifest: &Manifest,
    split: &SplitAssignment,
    name: SplitName,
    h: usize,
    w: usize,
    norm: Normalization,
) -> Result<LoadedSet> {
    let records = split.select(&manifest.records, name);
    // decode in parallel as raw planes (tensors are not Send), wrap after
    let planes = records
        .par_iter()
        .map(|r| {
            load_image(&root.join(&r.path), h, w, norm).map(|t| {
                let d = t.data().clone();
                d
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let images = planes
        .into_iter()
        .map(|d| Tensor::new(vec![3, h, w], d))
        .collect();
    Ok(LoadedSet {
        images,
        attrs: records.iter().map(|r| r.attrs.clone()).collect(),
        ids: records.iter().map(|r| r.id).collect(),
        cameras: records.iter().map(|r| r.camera).collect(),
        num_attributes: manifest.num_attributes(),
        height: h,
        width: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_labels_are_dense_and_ordered() {
        let (labels, k) = identity_labels(&[7, 3, 7, 10]);
        assert_eq!(k, 3);
        assert_eq!(labels, vec![1, 0, 1, 2]);
    }

    #[test]
    fn batch_stacks_in_index_order() {
        let set = LoadedSet {
            images: vec![
                Tensor::full(vec![3, 2, 2], 1.0),
                Tensor::full(vec![3, 2, 2], 2.0),
            ],
            attrs: vec![vec![1], vec![0]],
            ids: vec![0, 1],
            cameras: vec![0, 0],
            num_attributes: 1,
            height: 2,
            width: 2,
        };
        let b = set.batch(&[1, 0]);
        assert_eq!(b.dims(), &[2, 3, 2, 2]);
        assert_eq!(b.data()[0], 2.0);
        assert_eq!(b.data()[12], 1.0);
        assert_eq!(set.batch_attrs(&[1, 0]), vec![0, 1]);
        assert_eq!(set.positive_ratios(), vec![0.5]);
    }
}
