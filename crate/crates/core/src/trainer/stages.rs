//! The stage-wise training pipeline.
//!
//! Stage 1 trains the stem and backbone column under a temporary GAP+FC
//! head. The backbone is then duplicated into three attention columns.
//! Stage 2 (one pass per module) trains that module's attention head plus
//! the column blocks after the earliest attended level, everything else
//! frozen, again under a temporary head that is discarded. Stage 3 trains
//! only the fusion FC and task head with all BN in eval mode. Completed
//! stages are recorded and enforced across checkpoints.

use super::data::{identity_labels, LoadedSet};
use super::sgd::Sgd;
use super::{Result, StageHyper, TrainError, TrainLogRecord};
use crate::hpnet::layers::Linear;
use crate::hpnet::{HpNet, HpNetConfig, NamedTensor, Task, TrainMode};
use crate::tensor::{ops, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::Instant;

pub const STAGE_NAMES: [&str; 5] = ["stage1", "stage2a", "stage2b", "stage2c", "stage3"];

/// Attribute-loss weighting: w(1) = exp((1-r)/sigma^2), w(0) = exp(r/sigma^2)
/// from the training-split positive ratios r.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub ratios: Vec<f64>,
    pub sigma: f64,
    pub w_pos: Vec<f32>,
    pub w_neg: Vec<f32>,
}

impl LossSpec {
    pub fn from_ratios(ratios: Vec<f64>, sigma: f64) -> Result<LossSpec> {
        if sigma <= 0.0 {
            return Err(TrainError::Spec("sigma must be positive".into()));
        }
        for (m, &r) in ratios.iter().enumerate() {
            if r <= 0.0 || r >= 1.0 {
                return Err(TrainError::Spec(format!(
                    "attribute {m} positive ratio {r} outside (0,1); split lacks coverage"
                )));
            }
        }
        let s2 = sigma * sigma;
        let w_pos = ratios.iter().map(|&r| ((1.0 - r) / s2).exp() as f32).collect();
        let w_neg = ratios.iter().map(|&r| (r / s2).exp() as f32).collect();
        Ok(LossSpec {
            ratios,
            sigma,
            w_pos,
            w_neg,
        })
    }
}

/// Task supervision resolved against one training set.
enum Supervision {
    Attr(LossSpec),
    Id(Vec<usize>),
}

impl Supervision {
    fn build(task: Task, data: &LoadedSet, sigma: f64, num_outputs: usize) -> Result<Supervision> {
        match task {
            Task::Attributes => Ok(Supervision::Attr(LossSpec::from_ratios(
                data.positive_ratios(),
                sigma,
            )?)),
            Task::Reid => {
                let (labels, k) = identity_labels(&data.ids);
                if k > num_outputs {
                    return Err(TrainError::Spec(format!(
                        "training split has {k} identities but the head has {num_outputs} outputs"
                    )));
                }
                Ok(Supervision::Id(labels))
            }
        }
    }

    fn loss(&self, logits: &Tensor<f32>, data: &LoadedSet, idxs: &[usize]) -> Result<Tensor<f32>> {
        match self {
            Supervision::Attr(spec) => {
                let targets = data.batch_attrs(idxs);
                Ok(ops::weighted_bce_with_logits(
                    logits,
                    &targets,
                    &spec.w_pos,
                    &spec.w_neg,
                )?)
            }
            Supervision::Id(labels) => {
                let batch: Vec<usize> = idxs.iter().map(|&i| labels[i]).collect();
                Ok(ops::softmax_cross_entropy(logits, &batch)?)
            }
        }
    }
}

fn freeze_all(net: &HpNet) {
    for nt in net.named_tensors() {
        if !nt.buffer {
            nt.tensor.set_requires_grad(false);
        }
    }
}

fn unfreeze_all(net: &HpNet) {
    for nt in net.named_tensors() {
        if !nt.buffer {
            nt.tensor.set_requires_grad(true);
        }
    }
}

/// Mark the named prefixes trainable and return them for the optimizer.
fn select_trainable(net: &HpNet, prefixes: &[String]) -> Vec<NamedTensor> {
    net.named_tensors()
        .into_iter()
        .filter(|nt| !nt.buffer && prefixes.iter().any(|p| nt.name.starts_with(p.as_str())))
        .inspect(|nt| nt.tensor.set_requires_grad(true))
        .collect()
}

fn head_tensors(head: &Linear) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    head.named("tmp", &mut out);
    out
}

fn stage_tag(stage: &str) -> u64 {
    stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn run_epochs<F>(
    stage: &str,
    n: usize,
    hyper: &StageHyper,
    seed: u64,
    trainable: &[NamedTensor],
    mut forward_loss: F,
) -> Result<Vec<TrainLogRecord>>
where
    F: FnMut(&[usize]) -> Result<Tensor<f32>>,
{
    let mut opt = Sgd::new(hyper.momentum as f32);
    let mut logs = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..hyper.epochs {
        let t0 = Instant::now();
        let lr = hyper.lr * hyper.lr_decay.powi(epoch as i32);
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ stage_tag(stage) ^ ((epoch as u64) << 40));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let loss = forward_loss(chunk)?;
            let v = loss.data()[0] as f64;
            if !v.is_finite() {
                return Err(TrainError::Diverged {
                    stage: stage.to_string(),
                    epoch: epoch + 1,
                });
            }
            loss.backward()?;
            opt.step(lr as f32, trainable);
            loss_sum += v;
            batches += 1;
        }
        logs.push(TrainLogRecord {
            stage: stage.to_string(),
            epoch: epoch + 1,
            loss: loss_sum / batches.max(1) as f64,
            lr,
            seed,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
    }
    Ok(logs)
}

/// A network plus its completed-stage markers; the unit that checkpoints.
pub struct TrainState {
    pub net: HpNet,
    pub completed: Vec<String>,
}

impl TrainState {
    pub fn new(config: HpNetConfig, seed: u64) -> Result<TrainState> {
        Ok(TrainState {
            net: HpNet::build(config, seed)?,
            completed: Vec::new(),
        })
    }

    pub fn has(&self, stage: &str) -> bool {
        self.completed.iter().any(|s| s == stage)
    }

    fn mark(&mut self, stage: &str) {
        if !self.has(stage) {
            self.completed.push(stage.to_string());
        }
    }

    /// Train stem + backbone under a temporary GAP+FC head (discarded).
    pub fn run_stage1(
        &mut self,
        data: &LoadedSet,
        hyper: &StageHyper,
        seed: u64,
    ) -> Result<Vec<TrainLogRecord>> {
        if data.is_empty() {
            return Err(TrainError::Spec("empty training split".into()));
        }
        let cfg = &self.net.config;
        let sup = Supervision::build(cfg.task, data, hyper.sigma, cfg.num_outputs())?;
        freeze_all(&self.net);
        let mut trainable = select_trainable(&self.net, &["stem.".into(), "mnet.".into()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7e4d_0001));
        let head = Linear::new(&mut rng, cfg.block_channels[2], cfg.num_outputs());
        trainable.extend(head_tensors(&head));
        let mode = TrainMode {
            stem: true,
            mnet: [true; 3],
            ..TrainMode::eval()
        };
        let net = &self.net;
        let logs = run_epochs("stage1", data.len(), hyper, seed, &trainable, |idxs| {
            let x = data.batch(idxs);
            let stem_out = net.stem_forward(&x, &mode)?;
            let pooled = net.mnet_vector(&stem_out, &mode)?;
            let logits = head.forward(&pooled)?;
            sup.loss(&logits, data, idxs)
        })?;
        unfreeze_all(&self.net);
        self.mark("stage1");
        Ok(logs)
    }

    /// Duplicate the trained backbone into the three attention columns.
    pub fn construct_afnet(&mut self, seed: u64) -> Result<()> {
        if !self.has("stage1") {
            return Err(TrainError::StageOrder(
                "attention columns require a completed stage1".into(),
            ));
        }
        self.net.construct_afnet(seed);
        Ok(())
    }

    /// Fine-tune one attention module (0-based). Trains the attention head
    /// and that column's blocks after the earliest attended level; the stem,
    /// the backbone, and all other columns stay frozen.
    pub fn run_stage2(
        &mut self,
        module: usize,
        data: &LoadedSet,
        hyper: &StageHyper,
        seed: u64,
    ) -> Result<Vec<TrainLogRecord>> {
        if module >= 3 {
            return Err(TrainError::Spec(format!("module index {module} out of range")));
        }
        if !self.has("stage1") {
            return Err(TrainError::StageOrder("stage2 requires completed stage1".into()));
        }
        let stage = STAGE_NAMES[1 + module];
        let row = self.net.config.connectivity[module];
        let enabled: Vec<usize> = (0..3).filter(|&k| row[k]).collect();
        if enabled.is_empty() {
            // pruned module: nothing to train
            self.mark(stage);
            return Ok(Vec::new());
        }
        if self.net.af.is_none() {
            return Err(TrainError::StageOrder(
                "stage2 requires constructed attention columns".into(),
            ));
        }
        if data.is_empty() {
            return Err(TrainError::Spec("empty training split".into()));
        }
        let cfg = &self.net.config;
        let sup = Supervision::build(cfg.task, data, hyper.sigma, cfg.num_outputs())?;
        let min_k = enabled[0];
        freeze_all(&self.net);
        let mut prefixes = vec![format!("att{}.", module + 1)];
        for j in (min_k + 1)..3 {
            prefixes.push(format!("af{}.block{}.", module + 1, j + 1));
        }
        let mut trainable = select_trainable(&self.net, &prefixes);
        let in_dim = enabled.len() * cfg.attention_channels * cfg.block_channels[2];
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7e4d_0002 + module as u64));
        let head = Linear::new(&mut rng, in_dim, cfg.num_outputs());
        trainable.extend(head_tensors(&head));
        let mut mode = TrainMode::eval();
        mode.att[module] = true;
        for j in (min_k + 1)..3 {
            mode.af[module][j] = true;
        }
        let net = &self.net;
        let logs = run_epochs(stage, data.len(), hyper, seed, &trainable, |idxs| {
            let x = data.batch(idxs);
            let stem_out = net.stem_forward(&x, &mode)?;
            let (vecs, _) = net.branch_forward(module, &stem_out, &mode)?;
            let fused = ops::concat_channels(&vecs)?;
            let logits = head.forward(&fused)?;
            sup.loss(&logits, data, idxs)
        })?;
        unfreeze_all(&self.net);
        self.mark(stage);
        Ok(logs)
    }

    /// Train only the fusion FC and task head; every conv/BN frozen and in
    /// eval mode.
    pub fn run_stage3(
        &mut self,
        data: &LoadedSet,
        hyper: &StageHyper,
        seed: u64,
    ) -> Result<Vec<TrainLogRecord>> {
        for s in &STAGE_NAMES[..4] {
            if !self.has(s) {
                return Err(TrainError::StageOrder(format!(
                    "stage3 requires completed {s}"
                )));
            }
        }
        if data.is_empty() {
            return Err(TrainError::Spec("empty training split".into()));
        }
        if self.net.fusion.is_none() {
            self.net.init_fusion(seed);
        }
        let cfg = &self.net.config;
        let sup = Supervision::build(cfg.task, data, hyper.sigma, cfg.num_outputs())?;
        freeze_all(&self.net);
        let trainable = select_trainable(&self.net, &["fusion.".into()]);
        let mode = TrainMode::eval();
        let net = &self.net;
        let logs = run_epochs("stage3", data.len(), hyper, seed, &trainable, |idxs| {
            let x = data.batch(idxs);
            let out = net.forward(&x, &mode)?;
            sup.loss(&out.logits, data, idxs)
        })?;
        unfreeze_all(&self.net);
        self.mark("stage3");
        Ok(logs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::checkpoint::save_checkpoint(&self.net, &self.completed, path)
    }

    pub fn load(path: &Path) -> Result<TrainState> {
        let (net, completed) = super::checkpoint::load_checkpoint(path)?;
        Ok(TrainState { net, completed })
    }
}
