//! Differentiable primitives.
//!
//! Every op validates shapes up front, computes the forward result, and
//! registers a backward closure on the output. Accumulation orders are fixed
//! so results are bit-identical across runs; rayon is only used where each
//! output element is produced by exactly one task.

use super::{lit, Result, Scalar, Tensor, TensorError};
use rayon::prelude::*;

fn shape_err<V>(msg: String) -> Result<V> {
    Err(TensorError::Shape(msg))
}

fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.dims() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        d => shape_err(format!("{what} must be 4-d, got {d:?}")),
    }
}

// ---------------------------------------------------------------------------
// dense kernels
// ---------------------------------------------------------------------------

/// c[m,n] = a[m,k] * b[k,n]
fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), m * n);
    for (i, row) in out.chunks_mut(n).enumerate() {
        row.fill(T::zero());
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// c[m,n] += a[m,k] * b[n,k]^T
fn matmul_bt_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), m * n);
    for (i, row) in out.chunks_mut(n).enumerate() {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// c[m,n] = a[k,m]^T * b[k,n]
fn matmul_at<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), m * n);
    out.fill(T::zero());
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in crow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    let mut row = 0usize;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for dy in 0..kh {
            for dx in 0..kw {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                let mut idx = 0usize;
                for oy in 0..oh {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        dst[idx] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w
                        {
                            plane[iy as usize * w + ix as usize]
                        } else {
                            T::zero()
                        };
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_acc<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let mut row = 0usize;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for dy in 0..kh {
            for dx in 0..kw {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                let mut idx = 0usize;
                for oy in 0..oh {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            plane[iy as usize * w + ix as usize] += src[idx];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// 2-d cross-correlation over NCHW with zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(input, "conv2d input")?;
    let (kout, kc, kh, kw) = dims4(weight, "conv2d weight")?;
    if kc != c {
        return shape_err(format!(
            "conv2d channel mismatch: input has {c}, weight expects {kc}"
        ));
    }
    if !(kh == 1 || kh == 3) || !(kw == 1 || kw == 3) {
        return Err(TensorError::Param(format!(
            "conv2d supports 1x1 and 3x3 kernels, got {kh}x{kw}"
        )));
    }
    if bias.dims() != [kout] {
        return shape_err(format!(
            "conv2d bias must be [{kout}], got {:?}",
            bias.dims()
        ));
    }
    if stride == 0 {
        return Err(TensorError::Param("conv2d stride must be >= 1".into()));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return shape_err(format!(
            "conv2d kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})"
        ));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let ckk = c * kh * kw;

    let mut out = vec![T::zero(); n * kout * oh * ow];
    {
        let x_ref = input.data();
        let wt_ref = weight.data();
        let b_ref = bias.data();
        let (x, wt, b): (&[T], &[T], &[T]) = (&x_ref, &wt_ref, &b_ref);
        out.par_chunks_mut(kout * oh * ow)
            .enumerate()
            .for_each(|(s, o)| {
                let mut col = vec![T::zero(); ckk * oh * ow];
                im2col(
                    &x[s * c * h * w..(s + 1) * c * h * w],
                    c,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    padding,
                    oh,
                    ow,
                    &mut col,
                );
                matmul(&wt, &col, kout, ckk, oh * ow, o);
                for (k, plane) in o.chunks_mut(oh * ow).enumerate() {
                    let bk = b[k];
                    for v in plane.iter_mut() {
                        *v += bk;
                    }
                }
            });
    }

    let xin = input.clone();
    let win = weight.clone();
    let bin = bias.clone();
    Ok(Tensor::from_op(
        vec![n, kout, oh, ow],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        move |gout| {
            let x_ref = xin.data();
            let wt_ref = win.data();
            let (x, wt): (&[T], &[T]) = (&x_ref, &wt_ref);
            if bin.requires_grad() {
                let mut db = vec![T::zero(); kout];
                for s in 0..n {
                    let g = &gout[s * kout * oh * ow..(s + 1) * kout * oh * ow];
                    for (k, plane) in g.chunks(oh * ow).enumerate() {
                        for &v in plane {
                            db[k] += v;
                        }
                    }
                }
                bin.accumulate_grad(&db);
            }
            let need_w = win.requires_grad();
            let need_x = xin.requires_grad();
            if !need_w && !need_x {
                return;
            }
            // Per-sample partials computed in parallel, reduced in sample order.
            let partials: Vec<(Vec<T>, Vec<T>)> = (0..n)
                .into_par_iter()
                .map(|s| {
                    let g = &gout[s * kout * oh * ow..(s + 1) * kout * oh * ow];
                    let mut dw = Vec::new();
                    if need_w {
                        let mut col = vec![T::zero(); ckk * oh * ow];
                        im2col(
                            &x[s * c * h * w..(s + 1) * c * h * w],
                            c,
                            h,
                            w,
                            kh,
                            kw,
                            stride,
                            padding,
                            oh,
                            ow,
                            &mut col,
                        );
                        dw = vec![T::zero(); kout * ckk];
                        matmul_bt_acc(g, &col, kout, oh * ow, ckk, &mut dw);
                    }
                    let mut dx = Vec::new();
                    if need_x {
                        let mut dcol = vec![T::zero(); ckk * oh * ow];
                        matmul_at(&wt, g, kout, ckk, oh * ow, &mut dcol);
                        dx = vec![T::zero(); c * h * w];
                        col2im_acc(
                            &dcol, c, h, w, kh, kw, stride, padding, oh, ow, &mut dx,
                        );
                    }
                    (dw, dx)
                })
                .collect();
            if need_w {
                let mut dw = vec![T::zero(); kout * ckk];
                for (p, _) in &partials {
                    for (a, &b) in dw.iter_mut().zip(p) {
                        *a += b;
                    }
                }
                win.accumulate_grad(&dw);
            }
            if need_x {
                let mut dx = vec![T::zero(); n * c * h * w];
                for (s, (_, p)) in partials.iter().enumerate() {
                    dx[s * c * h * w..(s + 1) * c * h * w].copy_from_slice(p);
                }
                xin.accumulate_grad(&dx);
            }
        },
    ))
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch normalization over N,H,W.
///
/// Train mode normalizes with batch statistics and folds them into the
/// running stats with the given momentum (`rm = momentum*rm + (1-momentum)*batch`).
/// Eval mode normalizes with the running stats. Running-stat tensors never
/// track gradients.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    train: bool,
    momentum: f64,
    epsilon: f64,
) -> Result<Tensor<T>> {
    if epsilon <= 0.0 {
        return Err(TensorError::Param(format!(
            "batchnorm epsilon must be > 0, got {epsilon}"
        )));
    }
    let (n, c, h, w) = dims4(input, "batchnorm input")?;
    for (t, what) in [
        (gamma, "gamma"),
        (beta, "beta"),
        (running_mean, "running_mean"),
        (running_var, "running_var"),
    ] {
        if t.dims() != [c] {
            return shape_err(format!("batchnorm {what} must be [{c}], got {:?}", t.dims()));
        }
    }
    assert!(
        !running_mean.requires_grad() && !running_var.requires_grad(),
        "running stats are state, not parameters"
    );
    let m = n * h * w;
    if m == 0 {
        return shape_err("batchnorm requires N*H*W >= 1".into());
    }
    let eps = lit::<T>(epsilon);
    let plane = h * w;

    let (mean, var): (Vec<T>, Vec<T>) = if train {
        let x = input.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let inv_m = T::one() / lit::<T>(m as f64);
        for ch in 0..c {
            let mut acc = T::zero();
            for s in 0..n {
                let p = &x[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                for &v in p {
                    acc += v;
                }
            }
            let mu = acc * inv_m;
            let mut vacc = T::zero();
            for s in 0..n {
                let p = &x[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                for &v in p {
                    let d = v - mu;
                    vacc += d * d;
                }
            }
            mean[ch] = mu;
            var[ch] = vacc * inv_m;
        }
        let mom = lit::<T>(momentum);
        let one_minus = T::one() - mom;
        {
            let mut rm = running_mean.data_mut();
            let mut rv = running_var.data_mut();
            for ch in 0..c {
                rm[ch] = mom * rm[ch] + one_minus * mean[ch];
                rv[ch] = mom * rv[ch] + one_minus * var[ch];
            }
        }
        (mean, var)
    } else {
        (running_mean.data().clone(), running_var.data().clone())
    };

    let std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); n * c * plane];
    let mut out = vec![T::zero(); n * c * plane];
    {
        let x = input.data();
        let g = gamma.data();
        let b = beta.data();
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                let inv_std = T::one() / std[ch];
                let (mu, gm, bt) = (mean[ch], g[ch], b[ch]);
                for i in 0..plane {
                    let xh = (x[base + i] - mu) * inv_std;
                    xhat[base + i] = xh;
                    out[base + i] = gm * xh + bt;
                }
            }
        }
    }

    let xin = input.clone();
    let gin = gamma.clone();
    let bin = beta.clone();
    Ok(Tensor::from_op(
        vec![n, c, h, w],
        out,
        vec![input.clone(), gamma.clone(), beta.clone()],
        move |gout| {
            let g = gin.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * plane;
                    for i in 0..plane {
                        dgamma[ch] += gout[base + i] * xhat[base + i];
                        dbeta[ch] += gout[base + i];
                    }
                }
            }
            if xin.requires_grad() {
                let mut dx = vec![T::zero(); n * c * plane];
                let inv_m = T::one() / lit::<T>(m as f64);
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        let scale = g[ch] / std[ch];
                        if train {
                            let mg = dbeta[ch] * inv_m;
                            let mgx = dgamma[ch] * inv_m;
                            for i in 0..plane {
                                dx[base + i] =
                                    scale * (gout[base + i] - mg - xhat[base + i] * mgx);
                            }
                        } else {
                            for i in 0..plane {
                                dx[base + i] = scale * gout[base + i];
                            }
                        }
                    }
                }
                xin.accumulate_grad(&dx);
            }
            if gin.requires_grad() {
                gin.accumulate_grad(&dgamma);
            }
            if bin.requires_grad() {
                bin.accumulate_grad(&dbeta);
            }
        },
    ))
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

/// max(0, x); sub-gradient at 0 is 0.
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let out: Vec<T> = input.data().iter().map(|&v| v.max(T::zero())).collect();
    let xin = input.clone();
    Tensor::from_op(
        input.dims().to_vec(),
        out,
        vec![input.clone()],
        move |gout| {
            let x = xin.data();
            let dx: Vec<T> = gout
                .iter()
                .zip(x.iter())
                .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                .collect();
            drop(x);
            xin.accumulate_grad(&dx);
        },
    )
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.dims(), b.dims(), "add requires equal shapes");
    let out: Vec<T> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x + y)
        .collect();
    let (ain, bin) = (a.clone(), b.clone());
    Tensor::from_op(a.dims().to_vec(), out, vec![a.clone(), b.clone()], move |g| {
        if ain.requires_grad() {
            ain.accumulate_grad(g);
        }
        if bin.requires_grad() {
            bin.accumulate_grad(g);
        }
    })
}

/// Elementwise product of two same-shape tensors.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.dims(), b.dims(), "mul requires equal shapes");
    let out: Vec<T> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x * y)
        .collect();
    let (ain, bin) = (a.clone(), b.clone());
    Tensor::from_op(a.dims().to_vec(), out, vec![a.clone(), b.clone()], move |g| {
        if ain.requires_grad() {
            let bd = bin.data();
            let da: Vec<T> = g.iter().zip(bd.iter()).map(|(&gv, &bv)| gv * bv).collect();
            drop(bd);
            ain.accumulate_grad(&da);
        }
        if bin.requires_grad() {
            let ad = ain.data();
            let db: Vec<T> = g.iter().zip(ad.iter()).map(|(&gv, &av)| gv * av).collect();
            drop(ad);
            bin.accumulate_grad(&db);
        }
    })
}

/// out[n,c,h,w] = attn[n,0,h,w] * feat[n,c,h,w]
pub fn mul_broadcast<T: Scalar>(attn: &Tensor<T>, feat: &Tensor<T>) -> Result<Tensor<T>> {
    let (an, ac, ah, aw) = dims4(attn, "mul_broadcast attn")?;
    let (fn_, fc, fh, fw) = dims4(feat, "mul_broadcast feat")?;
    if ac != 1 {
        return shape_err(format!("mul_broadcast attn must have 1 channel, got {ac}"));
    }
    if an != fn_ || ah != fh || aw != fw {
        return shape_err(format!(
            "mul_broadcast spatial mismatch: attn [{an},1,{ah},{aw}] vs feat [{fn_},{fc},{fh},{fw}]"
        ));
    }
    let plane = fh * fw;
    let mut out = vec![T::zero(); fn_ * fc * plane];
    {
        let a = attn.data();
        let f = feat.data();
        for s in 0..fn_ {
            let ap = &a[s * plane..(s + 1) * plane];
            for c in 0..fc {
                let base = (s * fc + c) * plane;
                for i in 0..plane {
                    out[base + i] = ap[i] * f[base + i];
                }
            }
        }
    }
    let (ain, fin) = (attn.clone(), feat.clone());
    Ok(Tensor::from_op(
        feat.dims().to_vec(),
        out,
        vec![attn.clone(), feat.clone()],
        move |g| {
            if ain.requires_grad() {
                let f = fin.data();
                let mut da = vec![T::zero(); fn_ * plane];
                for s in 0..fn_ {
                    for c in 0..fc {
                        let base = (s * fc + c) * plane;
                        for i in 0..plane {
                            da[s * plane + i] += g[base + i] * f[base + i];
                        }
                    }
                }
                drop(f);
                ain.accumulate_grad(&da);
            }
            if fin.requires_grad() {
                let a = ain.data();
                let mut df = vec![T::zero(); fn_ * fc * plane];
                for s in 0..fn_ {
                    let ap = &a[s * plane..(s + 1) * plane];
                    for c in 0..fc {
                        let base = (s * fc + c) * plane;
                        for i in 0..plane {
                            df[base + i] = g[base + i] * ap[i];
                        }
                    }
                }
                drop(a);
                fin.accumulate_grad(&df);
            }
        },
    ))
}

// ---------------------------------------------------------------------------
// concat / slice along axis 1
// ---------------------------------------------------------------------------

/// Concatenate along axis 1 (channels for NCHW, features for NxD).
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return shape_err("concat_channels requires at least one part".into());
    }
    let rank = parts[0].dims().len();
    if rank < 2 {
        return shape_err("concat_channels requires rank >= 2".into());
    }
    let n = parts[0].dims()[0];
    let tail: Vec<usize> = parts[0].dims()[2..].to_vec();
    let inner: usize = tail.iter().product();
    let mut total_c = 0usize;
    for p in parts {
        if p.dims().len() != rank || p.dims()[0] != n || p.dims()[2..] != tail[..] {
            return shape_err(format!(
                "concat_channels parts disagree outside axis 1: {:?} vs {:?}",
                parts[0].dims(),
                p.dims()
            ));
        }
        total_c += p.dims()[1];
    }
    let mut dims = parts[0].dims().to_vec();
    dims[1] = total_c;

    let mut out = vec![T::zero(); n * total_c * inner];
    let mut offset = 0usize;
    let mut spans = Vec::with_capacity(parts.len());
    for p in parts {
        let c = p.dims()[1];
        let d = p.data();
        for s in 0..n {
            let dst = &mut out[(s * total_c + offset) * inner..(s * total_c + offset + c) * inner];
            dst.copy_from_slice(&d[s * c * inner..(s + 1) * c * inner]);
        }
        spans.push((p.clone(), offset, c));
        offset += c;
    }

    Ok(Tensor::from_op(dims, out, parts.to_vec(), move |g| {
        for (p, off, c) in &spans {
            if !p.requires_grad() {
                continue;
            }
            let mut dp = vec![T::zero(); n * c * inner];
            for s in 0..n {
                dp[s * c * inner..(s + 1) * c * inner].copy_from_slice(
                    &g[(s * total_c + off) * inner..(s * total_c + off + c) * inner],
                );
            }
            p.accumulate_grad(&dp);
        }
    }))
}

/// Take `count` channels starting at `start` along axis 1.
pub fn slice_channels<T: Scalar>(
    input: &Tensor<T>,
    start: usize,
    count: usize,
) -> Result<Tensor<T>> {
    let rank = input.dims().len();
    if rank < 2 {
        return shape_err("slice_channels requires rank >= 2".into());
    }
    let n = input.dims()[0];
    let c = input.dims()[1];
    let inner: usize = input.dims()[2..].iter().product();
    if start + count > c {
        return shape_err(format!(
            "slice_channels [{start}..{}] out of range for {c} channels",
            start + count
        ));
    }
    let mut dims = input.dims().to_vec();
    dims[1] = count;
    let mut out = vec![T::zero(); n * count * inner];
    {
        let d = input.data();
        for s in 0..n {
            out[s * count * inner..(s + 1) * count * inner]
                .copy_from_slice(&d[(s * c + start) * inner..(s * c + start + count) * inner]);
        }
    }
    let xin = input.clone();
    Ok(Tensor::from_op(dims, out, vec![input.clone()], move |g| {
        let mut dx = vec![T::zero(); n * c * inner];
        for s in 0..n {
            dx[(s * c + start) * inner..(s * c + start + count) * inner]
                .copy_from_slice(&g[s * count * inner..(s + 1) * count * inner]);
        }
        xin.accumulate_grad(&dx);
    }))
}

// ---------------------------------------------------------------------------
// pooling / resize
// ---------------------------------------------------------------------------

/// Per-channel spatial mean: [N,C,H,W] -> [N,C].
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(input, "global_avg_pool input")?;
    let plane = h * w;
    if plane == 0 {
        return shape_err("global_avg_pool requires H*W >= 1".into());
    }
    let inv = T::one() / lit::<T>(plane as f64);
    let mut out = vec![T::zero(); n * c];
    {
        let d = input.data();
        for (i, o) in out.iter_mut().enumerate() {
            let p = &d[i * plane..(i + 1) * plane];
            let mut acc = T::zero();
            for &v in p {
                acc += v;
            }
            *o = acc * inv;
        }
    }
    let xin = input.clone();
    Ok(Tensor::from_op(
        vec![n, c],
        out,
        vec![input.clone()],
        move |g| {
            let mut dx = vec![T::zero(); n * c * plane];
            for (i, &gv) in g.iter().enumerate() {
                let gv = gv * inv;
                for v in dx[i * plane..(i + 1) * plane].iter_mut() {
                    *v = gv;
                }
            }
            xin.accumulate_grad(&dx);
        },
    ))
}

/// Affine map: [N,D] x [D,E] + [E] -> [N,E].
pub fn fully_connected<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, d) = match input.dims() {
        [n, d] => (*n, *d),
        dims => return shape_err(format!("fully_connected input must be 2-d, got {dims:?}")),
    };
    let (wd, e) = match weight.dims() {
        [wd, e] => (*wd, *e),
        dims => return shape_err(format!("fully_connected weight must be 2-d, got {dims:?}")),
    };
    if wd != d {
        return shape_err(format!(
            "fully_connected inner dims disagree: input D={d}, weight D={wd}"
        ));
    }
    if bias.dims() != [e] {
        return shape_err(format!(
            "fully_connected bias must be [{e}], got {:?}",
            bias.dims()
        ));
    }
    let mut out = vec![T::zero(); n * e];
    {
        let x = input.data();
        let wt = weight.data();
        let b = bias.data();
        matmul(&x, &wt, n, d, e, &mut out);
        for row in out.chunks_mut(e) {
            for (o, &bv) in row.iter_mut().zip(b.iter()) {
                *o += bv;
            }
        }
    }
    let (xin, win, bin) = (input.clone(), weight.clone(), bias.clone());
    Ok(Tensor::from_op(
        vec![n, e],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        move |g| {
            if xin.requires_grad() {
                let wt = win.data();
                let mut dx = vec![T::zero(); n * d];
                matmul_bt_acc(g, &wt, n, e, d, &mut dx);
                drop(wt);
                xin.accumulate_grad(&dx);
            }
            if win.requires_grad() {
                let x = xin.data();
                let mut dw = vec![T::zero(); d * e];
                matmul_at(&x, g, n, d, e, &mut dw);
                drop(x);
                win.accumulate_grad(&dw);
            }
            if bin.requires_grad() {
                let mut db = vec![T::zero(); e];
                for row in g.chunks(e) {
                    for (o, &gv) in db.iter_mut().zip(row) {
                        *o += gv;
                    }
                }
                bin.accumulate_grad(&db);
            }
        },
    ))
}

/// Windowed maximum. Gradient routes to the first maximum in row-major window
/// order. Padding (with -inf) never wins a window.
pub fn max_pool<T: Scalar>(
    input: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(input, "max_pool input")?;
    if k == 0 || stride == 0 {
        return Err(TensorError::Param("max_pool requires k,stride >= 1".into()));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return shape_err(format!(
            "max_pool window {k} larger than padded input {h}x{w} (pad {padding})"
        ));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut argmax = vec![0u32; n * c * oh * ow];
    {
        let d = input.data();
        for nc in 0..n * c {
            let plane = &d[nc * h * w..(nc + 1) * h * w];
            let obase = nc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0u32;
                    for dy in 0..k {
                        let iy = (oy * stride + dy) as isize - padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for dx in 0..k {
                            let ix = (ox * stride + dx) as isize - padding as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            let v = plane[idx];
                            // strict > keeps the first occurrence on ties
                            if v > best {
                                best = v;
                                best_idx = idx as u32;
                            }
                        }
                    }
                    out[obase + oy * ow + ox] = best;
                    argmax[obase + oy * ow + ox] = best_idx;
                }
            }
        }
    }
    let xin = input.clone();
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        vec![input.clone()],
        move |g| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for nc in 0..n * c {
                let obase = nc * oh * ow;
                let ibase = nc * h * w;
                for i in 0..oh * ow {
                    dx[ibase + argmax[obase + i] as usize] += g[obase + i];
                }
            }
            xin.accumulate_grad(&dx);
        },
    ))
}

struct AxisTap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn resize_taps(in_len: usize, out_len: usize) -> Vec<AxisTap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            AxisTap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Align-corners-false bilinear interpolation to the given spatial size.
pub fn bilinear_resize<T: Scalar>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(input, "bilinear_resize input")?;
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::Param(
            "bilinear_resize target must be >= 1x1".into(),
        ));
    }
    let ty = resize_taps(h, out_h);
    let tx = resize_taps(w, out_w);
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    {
        let d = input.data();
        for nc in 0..n * c {
            let plane = &d[nc * h * w..(nc + 1) * h * w];
            let obase = nc * out_h * out_w;
            for (oy, yt) in ty.iter().enumerate() {
                let fy = lit::<T>(yt.frac);
                let ify = T::one() - fy;
                for (ox, xt) in tx.iter().enumerate() {
                    let fx = lit::<T>(xt.frac);
                    let ifx = T::one() - fx;
                    let v = ify * (ifx * plane[yt.lo * w + xt.lo] + fx * plane[yt.lo * w + xt.hi])
                        + fy * (ifx * plane[yt.hi * w + xt.lo] + fx * plane[yt.hi * w + xt.hi]);
                    out[obase + oy * out_w + ox] = v;
                }
            }
        }
    }
    let xin = input.clone();
    let (ty2, tx2) = (ty, tx);
    Ok(Tensor::from_op(
        vec![n, c, out_h, out_w],
        out,
        vec![input.clone()],
        move |g| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for nc in 0..n * c {
                let plane = &mut dx[nc * h * w..(nc + 1) * h * w];
                let obase = nc * out_h * out_w;
                for (oy, yt) in ty2.iter().enumerate() {
                    let fy = lit::<T>(yt.frac);
                    let ify = T::one() - fy;
                    for (ox, xt) in tx2.iter().enumerate() {
                        let fx = lit::<T>(xt.frac);
                        let ifx = T::one() - fx;
                        let gv = g[obase + oy * out_w + ox];
                        plane[yt.lo * w + xt.lo] += gv * ify * ifx;
                        plane[yt.lo * w + xt.hi] += gv * ify * fx;
                        plane[yt.hi * w + xt.lo] += gv * fy * ifx;
                        plane[yt.hi * w + xt.hi] += gv * fy * fx;
                    }
                }
            }
            xin.accumulate_grad(&dx);
        },
    ))
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

/// Sum of all elements to a scalar.
pub fn sum<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::zero();
    for &v in input.data().iter() {
        acc += v;
    }
    let n = input.len();
    let xin = input.clone();
    Tensor::from_op(vec![1], vec![acc], vec![input.clone()], move |g| {
        xin.accumulate_grad(&vec![g[0]; n]);
    })
}

/// Elementwise logistic sigmoid.
pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let out: Vec<T> = input
        .data()
        .iter()
        .map(|&v| T::one() / (T::one() + (-v).exp()))
        .collect();
    let saved = out.clone();
    let xin = input.clone();
    Tensor::from_op(
        input.dims().to_vec(),
        out,
        vec![input.clone()],
        move |g| {
            let dx: Vec<T> = g
                .iter()
                .zip(saved.iter())
                .map(|(&gv, &s)| gv * s * (T::one() - s))
                .collect();
            xin.accumulate_grad(&dx);
        },
    )
}

/// Class-weighted binary cross-entropy over logits, mean over N*M.
///
/// `targets` holds 0/1 labels row-major; `w_pos`/`w_neg` hold per-attribute
/// weights of length M.
pub fn weighted_bce_with_logits<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[u8],
    w_pos: &[T],
    w_neg: &[T],
) -> Result<Tensor<T>> {
    let (n, m) = match logits.dims() {
        [n, m] => (*n, *m),
        dims => return shape_err(format!("bce logits must be 2-d, got {dims:?}")),
    };
    if targets.len() != n * m || w_pos.len() != m || w_neg.len() != m {
        return shape_err(format!(
            "bce arity mismatch: logits {n}x{m}, targets {}, weights {}/{}",
            targets.len(),
            w_pos.len(),
            w_neg.len()
        ));
    }
    let inv = T::one() / lit::<T>((n * m) as f64);
    let mut loss = T::zero();
    {
        let z = logits.data();
        for (i, (&zv, &y)) in z.iter().zip(targets.iter()).enumerate() {
            let wm = if y == 1 { w_pos[i % m] } else { w_neg[i % m] };
            let yv = lit::<T>(y as f64);
            // stable bce-with-logits
            let l = zv.max(T::zero()) - zv * yv + (T::one() + (-zv.abs()).exp()).ln();
            loss += wm * l;
        }
    }
    loss *= inv;
    let xin = logits.clone();
    let targets = targets.to_vec();
    let (w_pos, w_neg) = (w_pos.to_vec(), w_neg.to_vec());
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        move |g| {
            let z = xin.data();
            let dx: Vec<T> = z
                .iter()
                .zip(targets.iter())
                .enumerate()
                .map(|(i, (&zv, &y))| {
                    let wm = if y == 1 { w_pos[i % m] } else { w_neg[i % m] };
                    let s = T::one() / (T::one() + (-zv).exp());
                    g[0] * inv * wm * (s - lit::<T>(y as f64))
                })
                .collect();
            drop(z);
            xin.accumulate_grad(&dx);
        },
    ))
}

/// Softmax cross-entropy over logits with integer class targets, mean over N.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<Tensor<T>> {
    let (n, k) = match logits.dims() {
        [n, k] => (*n, *k),
        dims => return shape_err(format!("softmax logits must be 2-d, got {dims:?}")),
    };
    if targets.len() != n {
        return shape_err(format!(
            "softmax targets must have length {n}, got {}",
            targets.len()
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(TensorError::Param(format!(
            "softmax target class {bad} out of range 0..{k}"
        )));
    }
    let mut probs = vec![T::zero(); n * k];
    let mut loss = T::zero();
    {
        let z = logits.data();
        for s in 0..n {
            let row = &z[s * k..(s + 1) * k];
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                probs[s * k + j] = e;
                denom += e;
            }
            for p in probs[s * k..(s + 1) * k].iter_mut() {
                *p = *p / denom;
            }
            loss -= probs[s * k + targets[s]].max(lit::<T>(1e-30)).ln();
        }
    }
    loss = loss / lit::<T>(n as f64);
    let xin = logits.clone();
    let targets = targets.to_vec();
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        move |g| {
            let inv = g[0] / lit::<T>(n as f64);
            let mut dx = probs.clone();
            for (s, &t) in targets.iter().enumerate() {
                dx[s * k + t] -= T::one();
            }
            for v in dx.iter_mut() {
                *v = *v * inv;
            }
            xin.accumulate_grad(&dx);
        },
    ))
}
