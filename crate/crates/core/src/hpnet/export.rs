//! Attention-map export as grayscale rasters.

use super::network::HpNet;
use super::{NetError, Result};
use crate::datakit::{atomic_write, ppm};
use crate::tensor::{no_grad, Tensor};
use std::path::{Path, PathBuf};

/// Per-channel max normalization to [0,255]: an all-zero channel maps to
/// black, a constant nonzero channel to white.
pub(crate) fn normalize_channel(plane: &[f32]) -> Vec<u8> {
    let max = plane.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return vec![0; plane.len()];
    }
    plane
        .iter()
        .map(|&v| ((v.max(0.0) / max) * 255.0).round() as u8)
        .collect()
}

/// Write the attention maps of all three modules for one image
/// (`[3, H, W]`, already normalized) as `attn_b{i}_c{l}.pgm` under `out_dir`.
/// Returns the written paths in (module, channel) order.
pub fn export_attention(net: &HpNet, image: &Tensor<f32>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let dims = image.dims().to_vec();
    if dims.len() != 3 || dims[0] != 3 {
        return Err(NetError::Config(format!(
            "export expects one [3,H,W] image, got {dims:?}"
        )));
    }
    let batched = Tensor::new(vec![1, 3, dims[1], dims[2]], image.data().clone());
    let stacks = no_grad(|| net.attention_maps(&batched))?;
    let mut written = Vec::new();
    for stack in stacks {
        let [_, l_channels, h, w] = stack.alpha.dims() else {
            unreachable!("attention maps are rank 4");
        };
        let (l_channels, h, w) = (*l_channels, *h, *w);
        let data = stack.alpha.data();
        for l in 0..l_channels {
            let plane = &data[l * h * w..(l + 1) * h * w];
            let bytes = ppm::encode_pgm(w, h, &normalize_channel(plane));
            let path = out_dir.join(format!(
                "attn_b{}_c{}.pgm",
                stack.source_block + 1,
                l + 1
            ));
            atomic_write(&path, &bytes).map_err(|e| NetError::Export {
                path: path.clone(),
                msg: e.to_string(),
            })?;
            written.push(path);
        }
    }
    Ok(written)
}
