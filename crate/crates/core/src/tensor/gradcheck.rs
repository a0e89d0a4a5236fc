//! Central finite-difference gradient checking.
//!
//! The checker runs in `f64` and compares the analytic gradient from the
//! reverse sweep against `(f(x+eps) - f(x-eps)) / (2 eps)` elementwise.
//! Callers must keep inputs away from non-differentiable points (ReLU zeros,
//! max-pool ties) by at least `10 * eps`.

use super::{Result, Tensor, TensorError};

/// Max over elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    if eps <= 0.0 {
        return Err(TensorError::Param("grad_check eps must be > 0".into()));
    }
    for t in inputs {
        assert!(t.requires_grad(), "grad_check inputs must require grad");
        t.zero_grad();
    }
    let loss = f(inputs)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut max_err = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + eps;
            let up = f(inputs)?.data()[0];
            t.data_mut()[i] = orig - eps;
            let down = f(inputs)?.data()[0];
            t.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-3;

/// Result of checking one op over several random instances.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OpCheck {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Random values with |v| in [0.2, 1.0]: away from ReLU/abs kinks.
fn rand_tensor(rng: &mut rand_chacha::ChaCha8Rng, dims: Vec<usize>) -> Tensor<f64> {
    use rand::Rng;
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::param(dims, data)
}

/// Random values with pairwise gaps >= 0.03 (safe for max-pool under FD).
fn rand_distinct(rng: &mut rand_chacha::ChaCha8Rng, dims: Vec<usize>) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let n: usize = dims.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| -1.0 + 0.04 * i as f64).collect();
    levels.shuffle(rng);
    for v in levels.iter_mut() {
        *v += rng.gen_range(-0.004..0.004);
    }
    Tensor::param(dims, levels)
}

/// Run every differentiable primitive through `instances` random
/// finite-difference checks each, at the standard eps/tolerance.
pub fn standard_suite(seed: u64, instances: usize) -> Result<Vec<OpCheck>> {
    use super::ops;
    use rand::Rng;
    use rand::SeedableRng;
    type Case = Box<dyn Fn(&mut rand_chacha::ChaCha8Rng) -> Result<f64>>;

    let cases: Vec<(&str, Case)> = vec![
        (
            "conv2d_1x1",
            Box::new(|rng| {
                let (n, c, co, h, w) = (2, 2, 3, 3, 3);
                let x = rand_tensor(rng, vec![n, c, h, w]);
                let wt = rand_tensor(rng, vec![co, c, 1, 1]);
                let b = rand_tensor(rng, vec![co]);
                grad_check(
                    |ins| Ok(ops::sum(&ops::conv2d(&ins[0], &ins[1], &ins[2], 1, 0)?)),
                    &[x, wt, b],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "conv2d_3x3",
            Box::new(|rng| {
                let (n, c, co, h, w) = (1, 2, 2, 4, 3);
                let x = rand_tensor(rng, vec![n, c, h, w]);
                let wt = rand_tensor(rng, vec![co, c, 3, 3]);
                let b = rand_tensor(rng, vec![co]);
                grad_check(
                    |ins| Ok(ops::sum(&ops::conv2d(&ins[0], &ins[1], &ins[2], 1, 1)?)),
                    &[x, wt, b],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "batchnorm_train",
            Box::new(|rng| {
                let (n, c, h, w) = (2, 3, 2, 2);
                let x = rand_tensor(rng, vec![n, c, h, w]);
                let g = rand_tensor(rng, vec![c]);
                let b = rand_tensor(rng, vec![c]);
                let rm = Tensor::zeros(vec![c]);
                let rv = Tensor::new(vec![c], vec![1.0; c]);
                grad_check(
                    move |ins| {
                        Ok(ops::sum(&ops::mul(
                            &ops::batchnorm(&ins[0], &ins[1], &ins[2], &rm, &rv, true, 0.9, 1e-5)?,
                            &ops::batchnorm(&ins[0], &ins[1], &ins[2], &rm, &rv, true, 0.9, 1e-5)?,
                        )))
                    },
                    &[x, g, b],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "relu",
            Box::new(|rng| {
                let x = rand_tensor(rng, vec![3, 4]);
                grad_check(|ins| Ok(ops::sum(&ops::relu(&ins[0]))), &[x], GRADCHECK_EPS)
            }),
        ),
        (
            "add_mul",
            Box::new(|rng| {
                let a = rand_tensor(rng, vec![2, 5]);
                let b = rand_tensor(rng, vec![2, 5]);
                grad_check(
                    |ins| Ok(ops::sum(&ops::mul(&ops::add(&ins[0], &ins[1]), &ins[0]))),
                    &[a, b],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "mul_broadcast",
            Box::new(|rng| {
                let attn = rand_tensor(rng, vec![2, 1, 3, 2]);
                let feat = rand_tensor(rng, vec![2, 3, 3, 2]);
                grad_check(
                    |ins| Ok(ops::sum(&ops::mul_broadcast(&ins[0], &ins[1])?)),
                    &[attn, feat],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "concat_slice",
            Box::new(|rng| {
                let a = rand_tensor(rng, vec![2, 2, 2, 2]);
                let b = rand_tensor(rng, vec![2, 3, 2, 2]);
                grad_check(
                    |ins| {
                        let cat = ops::concat_channels(&[ins[0].clone(), ins[1].clone()])?;
                        Ok(ops::sum(&ops::mul(
                            &ops::slice_channels(&cat, 1, 3)?,
                            &ops::slice_channels(&cat, 1, 3)?,
                        )))
                    },
                    &[a, b],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "global_avg_pool",
            Box::new(|rng| {
                let x = rand_tensor(rng, vec![2, 3, 3, 2]);
                grad_check(
                    |ins| {
                        let p = ops::global_avg_pool(&ins[0])?;
                        Ok(ops::sum(&ops::mul(&p, &p)))
                    },
                    &[x],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "fully_connected",
            Box::new(|rng| {
                let x = rand_tensor(rng, vec![3, 4]);
                let w = rand_tensor(rng, vec![4, 2]);
                let b = rand_tensor(rng, vec![2]);
                grad_check(
                    |ins| {
                        let y = ops::fully_connected(&ins[0], &ins[1], &ins[2])?;
                        Ok(ops::sum(&ops::mul(&y, &y)))
                    },
                    &[x, w, b],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "max_pool_2x2",
            Box::new(|rng| {
                let x = rand_distinct(rng, vec![1, 2, 4, 4]);
                grad_check(
                    |ins| Ok(ops::sum(&ops::max_pool(&ins[0], 2, 2, 0)?)),
                    &[x],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "max_pool_3x3_pad",
            Box::new(|rng| {
                let x = rand_distinct(rng, vec![1, 2, 3, 4]);
                grad_check(
                    |ins| Ok(ops::sum(&ops::max_pool(&ins[0], 3, 1, 1)?)),
                    &[x],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "bilinear_resize",
            Box::new(|rng| {
                let x = rand_tensor(rng, vec![1, 2, 3, 3]);
                grad_check(
                    |ins| {
                        let up = ops::bilinear_resize(&ins[0], 5, 4)?;
                        let down = ops::bilinear_resize(&ins[0], 2, 2)?;
                        Ok(ops::add(
                            &ops::sum(&ops::mul(&up, &up)),
                            &ops::sum(&down),
                        ))
                    },
                    &[x],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "sigmoid",
            Box::new(|rng| {
                let x = rand_tensor(rng, vec![2, 4]);
                grad_check(
                    |ins| Ok(ops::sum(&ops::sigmoid(&ins[0]))),
                    &[x],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "weighted_bce_with_logits",
            Box::new(|rng| {
                let (n, m) = (3, 4);
                let logits = rand_tensor(rng, vec![n, m]);
                let mut r = rng.clone();
                let targets: Vec<u8> = (0..n * m).map(|_| r.gen_range(0..2u8)).collect();
                let w_pos: Vec<f64> = (0..m).map(|_| r.gen_range(0.5..2.0)).collect();
                let w_neg: Vec<f64> = (0..m).map(|_| r.gen_range(0.5..2.0)).collect();
                *rng = r;
                grad_check(
                    move |ins| ops::weighted_bce_with_logits(&ins[0], &targets, &w_pos, &w_neg),
                    &[logits],
                    GRADCHECK_EPS,
                )
            }),
        ),
        (
            "softmax_cross_entropy",
            Box::new(|rng| {
                let (n, k) = (3, 4);
                let logits = rand_tensor(rng, vec![n, k]);
                let mut r = rng.clone();
                let targets: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
                *rng = r;
                grad_check(
                    move |ins| ops::softmax_cross_entropy(&ins[0], &targets),
                    &[logits],
                    GRADCHECK_EPS,
                )
            }),
        ),
    ];

    let mut out = Vec::with_capacity(cases.len());
    for (name, case) in &cases {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
            seed ^ name.bytes().fold(0u64, |h, b| h.wrapping_mul(31) + b as u64),
        );
        let mut max_err = 0.0f64;
        for _ in 0..instances {
            max_err = max_err.max(case(&mut rng)?);
        }
        out.push(OpCheck {
            op: name.to_string(),
            instances,
            max_rel_err: max_err,
            pass: max_err < GRADCHECK_TOL,
        });
    }
    Ok(out)
}
