//! The multi-branch attentive network.
//!
//! A shared stem feeds the backbone column ("M-net") and, once constructed,
//! three duplicated columns. Each duplicated column carries one attention
//! module: a 1x1 conv + BN + ReLU over its block-`i` feature producing L
//! nonnegative maps, each applied multiplicatively to the features of every
//! enabled level `k` and propagated through the remaining blocks of the same
//! column before global average pooling. All pooled vectors plus the backbone
//! vector are concatenated and fused into a D-dim embedding.

use super::config::HpNetConfig;
use super::layers::{ConvBnRelu, InceptionBlock, Linear, NamedTensor};
use super::{NetError, Result};
use crate::tensor::{ops, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type T32 = Tensor<f32>;

/// Which batch-norm layers run in training mode (update running stats and
/// normalize by batch statistics). Frozen portions of the network keep their
/// statistics by running in eval mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainMode {
    pub stem: bool,
    pub mnet: [bool; 3],
    /// `[column][block]`
    pub af: [[bool; 3]; 3],
    pub att: [bool; 3],
}

impl TrainMode {
    pub fn eval() -> Self {
        TrainMode::default()
    }
}

/// The L attention maps generated from block `source_block` (0-based).
pub struct AttentionStack {
    pub alpha: T32,
    pub source_block: usize,
}

pub struct ForwardOutput {
    pub logits: T32,
    pub embedding: T32,
    pub attention: Vec<AttentionStack>,
}

pub struct Stem {
    pub conv1: ConvBnRelu,
    pub conv2: ConvBnRelu,
}

impl Stem {
    fn new(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        Stem {
            conv1: ConvBnRelu::new(rng, 3, channels, 3, 1, 1),
            conv2: ConvBnRelu::new(rng, channels, channels, 3, 1, 1),
        }
    }

    pub fn forward(&self, x: &T32, train: bool) -> Result<T32> {
        let a = self.conv1.forward(x, train)?;
        let p = ops::max_pool(&a, 2, 2, 0)?;
        Ok(self.conv2.forward(&p, train)?)
    }

    fn named(&self, out: &mut Vec<NamedTensor>) {
        self.conv1.named("stem.conv1", out);
        self.conv2.named("stem.conv2", out);
    }
}

/// Three inception-lite blocks with a stride-2 pool after the first two.
pub struct Column {
    pub blocks: [InceptionBlock; 3],
}

impl Column {
    fn new(rng: &mut ChaCha8Rng, stem_c: usize, channels: [usize; 3]) -> Self {
        Column {
            blocks: [
                InceptionBlock::new(rng, stem_c, channels[0]),
                InceptionBlock::new(rng, channels[0], channels[1]),
                InceptionBlock::new(rng, channels[1], channels[2]),
            ],
        }
    }

    /// Per-block feature maps `[F1, F2, F3]` from the stem output.
    pub fn forward_features(&self, stem_out: &T32, train: [bool; 3]) -> Result<[T32; 3]> {
        let f1 = self.blocks[0].forward(stem_out, train[0])?;
        let f2 = self.blocks[1].forward(&ops::max_pool(&f1, 2, 2, 0)?, train[1])?;
        let f3 = self.blocks[2].forward(&ops::max_pool(&f2, 2, 2, 0)?, train[2])?;
        Ok([f1, f2, f3])
    }

    /// Push a block-`k`-sized map through the remaining blocks of this
    /// column. `k = 2` has no following blocks and returns the input as-is.
    pub fn propagate(&self, x: &T32, k: usize, train: [bool; 3]) -> Result<T32> {
        let mut cur = x.clone();
        for j in (k + 1)..3 {
            cur = self.blocks[j].forward(&ops::max_pool(&cur, 2, 2, 0)?, train[j])?;
        }
        Ok(cur)
    }

    fn named(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (j, b) in self.blocks.iter().enumerate() {
            b.named(&format!("{prefix}.block{}", j + 1), out);
        }
    }

    fn clone_params(&self) -> Self {
        Column {
            blocks: [
                self.blocks[0].clone_params(),
                self.blocks[1].clone_params(),
                self.blocks[2].clone_params(),
            ],
        }
    }
}

/// The three duplicated columns plus one attention head per column.
pub struct AfNet {
    pub columns: [Column; 3],
    /// 1x1 conv + BN + ReLU producing the L maps of module `i`.
    pub heads: [ConvBnRelu; 3],
}

pub struct FusionHead {
    pub fc: Linear,
    pub head: Linear,
}

pub struct HpNet {
    pub config: HpNetConfig,
    pub stem: Stem,
    pub mnet: Column,
    pub af: Option<AfNet>,
    pub fusion: Option<FusionHead>,
}

impl HpNet {
    /// Stem + backbone column only; attention columns and the fusion head are
    /// added by [`HpNet::construct_afnet`] / [`HpNet::init_fusion`].
    pub fn build(config: HpNetConfig, seed: u64) -> Result<HpNet> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Stem::new(&mut rng, config.stem_channels);
        let mnet = Column::new(&mut rng, config.stem_channels, config.block_channels);
        Ok(HpNet {
            config,
            stem,
            mnet,
            af: None,
            fusion: None,
        })
    }

    /// Duplicate the backbone blocks into three columns (bit-identical
    /// copies) and attach freshly initialized attention heads.
    pub fn construct_afnet(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x6174_7400));
        let l = self.config.attention_channels;
        let heads = [
            ConvBnRelu::new(&mut rng, self.config.block_channels[0], l, 1, 1, 0),
            ConvBnRelu::new(&mut rng, self.config.block_channels[1], l, 1, 1, 0),
            ConvBnRelu::new(&mut rng, self.config.block_channels[2], l, 1, 1, 0),
        ];
        self.af = Some(AfNet {
            columns: [
                self.mnet.clone_params(),
                self.mnet.clone_params(),
                self.mnet.clone_params(),
            ],
            heads,
        });
    }

    /// Fusion FC (fused -> D) and task head (D -> outputs). Width depends on
    /// the connectivity mask, so this must run after it is final.
    pub fn init_fusion(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xf05e_d000));
        let fused = self.config.fused_dim();
        let d = self.config.feature_dim;
        self.fusion = Some(FusionHead {
            fc: Linear::new(&mut rng, fused, d),
            head: Linear::new(&mut rng, d, self.config.num_outputs()),
        });
    }

    fn check_input(&self, images: &T32) -> Result<()> {
        let c = &self.config;
        match images.dims() {
            [_, 3, h, w] if *h == c.input_height && *w == c.input_width => Ok(()),
            dims => Err(NetError::Config(format!(
                "input dims {dims:?} do not match configured [N,3,{},{}]",
                c.input_height, c.input_width
            ))),
        }
    }

    pub fn stem_forward(&self, images: &T32, mode: &TrainMode) -> Result<T32> {
        self.check_input(images)?;
        self.stem.forward(images, mode.stem)
    }

    /// Backbone pooled vector `[N, C3]`.
    pub fn mnet_vector(&self, stem_out: &T32, mode: &TrainMode) -> Result<T32> {
        let feats = self.mnet.forward_features(stem_out, mode.mnet)?;
        Ok(ops::global_avg_pool(&feats[2])?)
    }

    /// One attention module's sub-branch vectors (enabled directions in `k`
    /// order, each `[N, L*C3]`) plus its attention stack.
    pub fn branch_forward(
        &self,
        i: usize,
        stem_out: &T32,
        mode: &TrainMode,
    ) -> Result<(Vec<T32>, AttentionStack)> {
        if i >= 3 {
            return Err(NetError::Config(format!("module index {i} out of range")));
        }
        let af = self
            .af
            .as_ref()
            .ok_or_else(|| NetError::Config("attention columns not constructed".into()))?;
        let col = &af.columns[i];
        let feats = col.forward_features(stem_out, mode.af[i])?;
        let alpha = af.heads[i].forward(&feats[i], mode.att[i])?;
        let l_channels = self.config.attention_channels;
        let mut vecs = Vec::new();
        for k in 0..3 {
            if !self.config.connectivity[i][k] {
                continue;
            }
            let fk = &feats[k];
            let (fh, fw) = (fk.dims()[2], fk.dims()[3]);
            let a = if alpha.dims()[2] == fh && alpha.dims()[3] == fw {
                alpha.clone()
            } else {
                ops::bilinear_resize(&alpha, fh, fw)?
            };
            let mut pooled = Vec::with_capacity(l_channels);
            for l in 0..l_channels {
                let mask = ops::slice_channels(&a, l, 1)?;
                let masked = ops::mul_broadcast(&mask, fk)?;
                let prop = col.propagate(&masked, k, mode.af[i])?;
                pooled.push(ops::global_avg_pool(&prop)?);
            }
            vecs.push(ops::concat_channels(&pooled)?);
        }
        Ok((vecs, AttentionStack { alpha, source_block: i }))
    }

    /// Concatenated fused feature `[N, fused_dim]` plus attention stacks of
    /// every active module, in module order.
    pub fn fused_features(
        &self,
        images: &T32,
        mode: &TrainMode,
    ) -> Result<(T32, Vec<AttentionStack>)> {
        let stem_out = self.stem_forward(images, mode)?;
        let mut parts = vec![self.mnet_vector(&stem_out, mode)?];
        let mut attention = Vec::new();
        let active = self.config.active_modules();
        if active.iter().any(|&b| b) {
            for i in 0..3 {
                if !active[i] {
                    continue;
                }
                let (vecs, stack) = self.branch_forward(i, &stem_out, mode)?;
                parts.extend(vecs);
                attention.push(stack);
            }
        }
        Ok((ops::concat_channels(&parts)?, attention))
    }

    pub fn forward(&self, images: &T32, mode: &TrainMode) -> Result<ForwardOutput> {
        let fusion = self
            .fusion
            .as_ref()
            .ok_or_else(|| NetError::Config("fusion head not initialized".into()))?;
        let (fused, attention) = self.fused_features(images, mode)?;
        let embedding = fusion.fc.forward(&fused)?;
        let logits = fusion.head.forward(&embedding)?;
        Ok(ForwardOutput {
            logits,
            embedding,
            attention,
        })
    }

    /// Attention stacks of all three modules (eval BN), independent of the
    /// connectivity mask. Requires constructed attention columns.
    pub fn attention_maps(&self, images: &T32) -> Result<Vec<AttentionStack>> {
        let af = self
            .af
            .as_ref()
            .ok_or_else(|| NetError::Config("attention columns not constructed".into()))?;
        let mode = TrainMode::eval();
        let stem_out = self.stem_forward(images, &mode)?;
        let mut out = Vec::with_capacity(3);
        for i in 0..3 {
            let feats = af.columns[i].forward_features(&stem_out, mode.af[i])?;
            let alpha = af.heads[i].forward(&feats[i], mode.att[i])?;
            out.push(AttentionStack { alpha, source_block: i });
        }
        Ok(out)
    }

    /// Every tensor of the network with its stable name. Names are unique;
    /// checkpointing sorts them lexicographically.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.stem.named(&mut out);
        self.mnet.named("mnet", &mut out);
        if let Some(af) = &self.af {
            for i in 0..3 {
                af.columns[i].named(&format!("af{}", i + 1), &mut out);
                af.heads[i].named(&format!("att{}", i + 1), &mut out);
            }
        }
        if let Some(f) = &self.fusion {
            f.fc.named("fusion.fc", &mut out);
            f.head.named("fusion.head", &mut out);
        }
        out
    }

    /// One line per tensor, sorted by name, plus a trainable-element total.
    pub fn summary(&self) -> String {
        let mut named = self.named_tensors();
        named.sort_by(|a, b| a.name.cmp(&b.name));
        let mut out = String::new();
        let mut total = 0usize;
        for nt in &named {
            out.push_str(&format!("{} {:?}\n", nt.name, nt.tensor.dims()));
            if !nt.buffer {
                total += nt.tensor.len();
            }
        }
        out.push_str(&format!("trainable elements: {total}\n"));
        out
    }
}
