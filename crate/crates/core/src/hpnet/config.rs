//! Network configuration and connectivity masks.

use super::{NetError, Result};
use serde::{Deserialize, Serialize};

/// Supervision target: per-attribute logits or identity logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Attributes,
    Reid,
}

/// Shape of the whole network. `connectivity[i][k]` enables attention from
/// block `i`'s maps onto block `k`'s features (0-based); clearing entries
/// reproduces the ablated variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpNetConfig {
    pub stem_channels: usize,
    pub block_channels: [usize; 3],
    /// Attention channels per module (symbol L).
    pub attention_channels: usize,
    pub num_attributes: usize,
    pub num_identities: usize,
    /// Fused embedding size (symbol D).
    pub feature_dim: usize,
    pub connectivity: [[bool; 3]; 3],
    pub input_height: usize,
    pub input_width: usize,
    pub task: Task,
}

impl Default for HpNetConfig {
    fn default() -> Self {
        HpNetConfig {
            stem_channels: 16,
            block_channels: [32, 48, 64],
            attention_channels: 8,
            num_attributes: 8,
            num_identities: 100,
            feature_dim: 128,
            connectivity: [[true; 3]; 3],
            // datasets render at 96x64; the loader downscales to the
            // network input, and 48x32 keeps full pipelines in CPU budget
            input_height: 48,
            input_width: 32,
            task: Task::Attributes,
        }
    }
}

impl HpNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 || self.block_channels.iter().any(|&c| c == 0) {
            return Err(NetError::Config("channel counts must be positive".into()));
        }
        for (i, &c) in self.block_channels.iter().enumerate() {
            if c % 4 != 0 {
                return Err(NetError::Config(format!(
                    "block {} channels ({c}) must be divisible by 4 for the parallel paths",
                    i + 1
                )));
            }
        }
        if self.attention_channels == 0 {
            return Err(NetError::Config("attention_channels must be >= 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(NetError::Config("feature_dim must be >= 1".into()));
        }
        match self.task {
            Task::Attributes if self.num_attributes == 0 => {
                return Err(NetError::Config("attribute task needs num_attributes >= 1".into()))
            }
            Task::Reid if self.num_identities < 2 => {
                return Err(NetError::Config("reid task needs num_identities >= 2".into()))
            }
            _ => {}
        }
        // three stride-2 reductions: stem pool plus pools after blocks 1 and 2
        if self.input_height < 8 || self.input_width < 8 {
            return Err(NetError::Config(format!(
                "input {}x{} below the 8x8 minimum for three downsamplings",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    /// Number of task-head outputs.
    pub fn num_outputs(&self) -> usize {
        match self.task {
            Task::Attributes => self.num_attributes,
            Task::Reid => self.num_identities,
        }
    }

    /// Enabled (module, direction) pairs in lexicographic order; this order
    /// fixes the concatenation layout of the fused feature.
    pub fn enabled_directions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..3 {
            for k in 0..3 {
                if self.connectivity[i][k] {
                    out.push((i, k));
                }
            }
        }
        out
    }

    pub fn num_sub_branches(&self) -> usize {
        self.enabled_directions().len()
    }

    /// Modules whose connectivity row has at least one direction enabled.
    pub fn active_modules(&self) -> [bool; 3] {
        let mut out = [false; 3];
        for (i, row) in self.connectivity.iter().enumerate() {
            out[i] = row.iter().any(|&b| b);
        }
        out
    }

    /// Width of the concatenated feature entering the fusion FC: the backbone
    /// pooled vector plus L * C_3 per enabled direction (every masked map is
    /// propagated to block-3 depth before pooling).
    pub fn fused_dim(&self) -> usize {
        let c3 = self.block_channels[2];
        c3 + self.num_sub_branches() * self.attention_channels * c3
    }
}

/// Named connectivity presets for the ablation sweep, mirroring the grid of
/// attended variants: complete, backbone only, per-block self-attention,
/// middle level pruned, one/two modules pruned.
pub const ABLATION_GRID: [&str; 6] = [
    "complete",
    "mnet_only",
    "naive",
    "middle_pruned",
    "prune_one",
    "prune_two",
];

pub fn ablation_mask(name: &str) -> Option<[[bool; 3]; 3]> {
    let t = true;
    let f = false;
    Some(match name {
        "complete" => [[t; 3]; 3],
        "mnet_only" => [[f; 3]; 3],
        // each module attends only to its own level
        "naive" => [[t, f, f], [f, t, f], [f, f, t]],
        // middle module removed and no attention applied at the middle level
        "middle_pruned" => [[t, f, t], [f; 3], [t, f, t]],
        // first module removed
        "prune_one" => [[f; 3], [t; 3], [t; 3]],
        // first and second modules removed
        "prune_two" => [[f; 3], [f; 3], [t; 3]],
        _ => return None,
    })
}
