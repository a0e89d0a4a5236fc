//! SGD with classic momentum: v <- mu*v + g; p <- p - lr*v.

use crate::hpnet::NamedTensor;
use std::collections::HashMap;

pub struct Sgd {
    pub momentum: f32,
    velocity: HashMap<String, Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f32) -> Self {
        Sgd {
            momentum,
            velocity: HashMap::new(),
        }
    }

    /// Apply one update to every tensor that accumulated a gradient, then
    /// clear the gradients. Tensors without a gradient are left untouched.
    pub fn step(&mut self, lr: f32, params: &[NamedTensor]) {
        for nt in params {
            let Some(g) = nt.tensor.grad() else { continue };
            let v = self
                .velocity
                .entry(nt.name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let mut data = nt.tensor.data_mut();
            for ((vi, &gi), p) in v.iter_mut().zip(&g).zip(data.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *p -= lr * *vi;
            }
            drop(data);
            nt.tensor.zero_grad();
        }
    }
}
