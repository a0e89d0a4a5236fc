//! Dataset model: manifests, splits, rasters, and the synthetic generator.

pub mod manifest;
pub mod ppm;
pub mod split;
pub mod synth;

pub use manifest::{read_manifest, write_manifest, Manifest, SampleRecord};
pub use split::{read_split, tracklet_split, write_split, SplitAssignment, SplitName, SplitUnit};
pub use synth::{
    generate_synthetic, render_dataset, AttrLevel, AttributePlan, JitterSpec, RenderedSample,
    SynthSpec,
};

use crate::tensor::{ops, Tensor};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("spec error: {0}")]
    Spec(String),
    #[error("split infeasible: {0:?}")]
    Infeasible(Vec<String>),
}

pub type Result<V> = std::result::Result<V, DataError>;

/// Write via temp file + rename so failures never leave partial artifacts.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().map(|f| f.to_string_lossy()).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Per-channel normalization constants applied after scaling to [0,1].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.5, 0.5, 0.5],
            std: [0.25, 0.25, 0.25],
        }
    }
}

/// Decode a P6 raster, resize to `(target_h, target_w)`, scale to [0,1] and
/// normalize. Returns a `[3, target_h, target_w]` tensor.
pub fn load_image(
    path: &Path,
    target_h: usize,
    target_w: usize,
    norm: Normalization,
) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes, target_h, target_w, norm)
}

/// [`load_image`] on in-memory bytes.
pub fn decode_image(
    bytes: &[u8],
    target_h: usize,
    target_w: usize,
    norm: Normalization,
) -> Result<Tensor<f32>> {
    let (w, h, rgb) = ppm::decode_ppm(bytes)?;
    // interleaved u8 -> planar [1,3,h,w] float
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) * 3;
            for c in 0..3 {
                data[c * h * w + y * w + x] = rgb[p + c] as f32 / 255.0;
            }
        }
    }
    let t = Tensor::new(vec![1, 3, h, w], data);
    let resized = if h == target_h && w == target_w {
        t
    } else {
        ops::bilinear_resize(&t, target_h, target_w)
            .map_err(|e| DataError::Decode(e.to_string()))?
    };
    let mut out = resized.data().clone();
    let plane = target_h * target_w;
    for c in 0..3 {
        let (m, s) = (norm.mean[c], norm.std[c]);
        for v in out[c * plane..(c + 1) * plane].iter_mut() {
            *v = (*v - m) / s;
        }
    }
    Ok(Tensor::new(vec![3, target_h, target_w], out))
}
