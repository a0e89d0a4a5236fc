//! Building blocks: conv+BN+ReLU units, the inception-lite block, linear heads.

use crate::tensor::{ops, Result, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

type T32 = Tensor<f32>;

/// A named tensor of the network. `buffer` marks batch-norm running stats:
/// saved in checkpoints but never touched by the optimizer.
#[derive(Clone)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: T32,
    pub buffer: bool,
}

impl NamedTensor {
    fn param(name: String, tensor: T32) -> Self {
        NamedTensor { name, tensor, buffer: false }
    }
    fn buf(name: String, tensor: T32) -> Self {
        NamedTensor { name, tensor, buffer: true }
    }
}

/// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn uniform_init(rng: &mut ChaCha8Rng, fan_in: usize, count: usize) -> Vec<f32> {
    let b = 1.0 / (fan_in as f32).sqrt();
    (0..count).map(|_| rng.gen_range(-b..b)).collect()
}

pub struct BatchNorm {
    pub gamma: T32,
    pub beta: T32,
    pub running_mean: T32,
    pub running_var: T32,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::param(vec![channels], vec![1.0; channels]),
            beta: Tensor::param(vec![channels], vec![0.0; channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::new(vec![channels], vec![1.0; channels]),
        }
    }

    pub fn forward(&self, x: &T32, train: bool) -> Result<T32> {
        ops::batchnorm(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            train,
            BN_MOMENTUM,
            BN_EPSILON,
        )
    }

    fn named(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(NamedTensor::param(format!("{prefix}.gamma"), self.gamma.clone()));
        out.push(NamedTensor::param(format!("{prefix}.beta"), self.beta.clone()));
        out.push(NamedTensor::buf(
            format!("{prefix}.running_mean"),
            self.running_mean.clone(),
        ));
        out.push(NamedTensor::buf(
            format!("{prefix}.running_var"),
            self.running_var.clone(),
        ));
    }

    fn clone_params(&self) -> Self {
        BatchNorm {
            gamma: Tensor::param(self.gamma.dims().to_vec(), self.gamma.data().clone()),
            beta: Tensor::param(self.beta.dims().to_vec(), self.beta.data().clone()),
            running_mean: self.running_mean.detach(),
            running_var: self.running_var.detach(),
        }
    }
}

/// conv -> BN -> ReLU. Kernel size and padding fixed at construction.
pub struct ConvBnRelu {
    pub weight: T32,
    pub bias: T32,
    pub bn: BatchNorm,
    stride: usize,
    padding: usize,
}

impl ConvBnRelu {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = in_c * k * k;
        ConvBnRelu {
            weight: Tensor::param(
                vec![out_c, in_c, k, k],
                uniform_init(rng, fan_in, out_c * in_c * k * k),
            ),
            bias: Tensor::param(vec![out_c], vec![0.0; out_c]),
            bn: BatchNorm::new(out_c),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &T32, train: bool) -> Result<T32> {
        let z = ops::conv2d(x, &self.weight, &self.bias, self.stride, self.padding)?;
        Ok(ops::relu(&self.bn.forward(&z, train)?))
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(NamedTensor::param(format!("{prefix}.weight"), self.weight.clone()));
        out.push(NamedTensor::param(format!("{prefix}.bias"), self.bias.clone()));
        self.bn.named(&format!("{prefix}.bn"), out);
    }

    pub fn clone_params(&self) -> Self {
        ConvBnRelu {
            weight: Tensor::param(self.weight.dims().to_vec(), self.weight.data().clone()),
            bias: Tensor::param(self.bias.dims().to_vec(), self.bias.data().clone()),
            bn: self.bn.clone_params(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Three parallel paths concatenated on channels:
/// {1x1 -> C/4}, {1x1 -> C/4, 3x3 -> C/2}, {3x3 maxpool, 1x1 -> C/4}.
/// Output channel count is exactly `out_c` (must be divisible by 4).
pub struct InceptionBlock {
    pub p1: ConvBnRelu,
    pub p2a: ConvBnRelu,
    pub p2b: ConvBnRelu,
    pub p3: ConvBnRelu,
    out_c: usize,
}

impl InceptionBlock {
    pub fn new(rng: &mut ChaCha8Rng, in_c: usize, out_c: usize) -> Self {
        assert_eq!(out_c % 4, 0, "inception block channels must be divisible by 4");
        let q = out_c / 4;
        InceptionBlock {
            p1: ConvBnRelu::new(rng, in_c, q, 1, 1, 0),
            p2a: ConvBnRelu::new(rng, in_c, q, 1, 1, 0),
            p2b: ConvBnRelu::new(rng, q, 2 * q, 3, 1, 1),
            p3: ConvBnRelu::new(rng, in_c, q, 1, 1, 0),
            out_c,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_c
    }

    pub fn forward(&self, x: &T32, train: bool) -> Result<T32> {
        let a = self.p1.forward(x, train)?;
        let b = self.p2b.forward(&self.p2a.forward(x, train)?, train)?;
        let pooled = ops::max_pool(x, 3, 1, 1)?;
        let c = self.p3.forward(&pooled, train)?;
        ops::concat_channels(&[a, b, c])
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.p1.named(&format!("{prefix}.p1"), out);
        self.p2a.named(&format!("{prefix}.p2a"), out);
        self.p2b.named(&format!("{prefix}.p2b"), out);
        self.p3.named(&format!("{prefix}.p3"), out);
    }

    pub fn clone_params(&self) -> Self {
        InceptionBlock {
            p1: self.p1.clone_params(),
            p2a: self.p2a.clone_params(),
            p2b: self.p2b.clone_params(),
            p3: self.p3.clone_params(),
            out_c: self.out_c,
        }
    }
}

pub struct Linear {
    pub weight: T32,
    pub bias: T32,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Tensor::param(
                vec![in_dim, out_dim],
                uniform_init(rng, in_dim, in_dim * out_dim),
            ),
            bias: Tensor::param(vec![out_dim], vec![0.0; out_dim]),
        }
    }

    pub fn forward(&self, x: &T32) -> Result<T32> {
        ops::fully_connected(x, &self.weight, &self.bias)
    }

    pub fn named(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(NamedTensor::param(format!("{prefix}.weight"), self.weight.clone()));
        out.push(NamedTensor::param(format!("{prefix}.bias"), self.bias.clone()));
    }
}
