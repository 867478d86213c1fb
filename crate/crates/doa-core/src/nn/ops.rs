//! Layer primitives: valid-padding 2D convolution, ReLU, non-overlapping
//! max-pooling, dense affine maps, and fused softmax cross-entropy.
//!
//! Forward passes are generic over the scalar so the same code serves 64-bit
//! and 32-bit inference; backward passes run at 64-bit only, where training
//! happens. Conventions pinned for determinism: ReLU's gradient at exactly 0
//! is 0, and max-pool ties route the gradient to the first element of the
//! window in row-major scan order.

use crate::error::{Error, Result};
use crate::nn::tensor::{Scalar, Tensor};

fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::Shape(format!("{what} must be 4-d, got {other:?}"))),
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 2]> {
    match t.shape() {
        [a, b] => Ok([*a, *b]),
        other => Err(Error::Shape(format!("{what} must be 2-d, got {other:?}"))),
    }
}

// ── Convolution ──────────────────────────────────────────────────────

/// Valid-padding stride-1 convolution of an NHWC input with an HWIO kernel.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n_batch, h, w, cin] = dims4(input, "conv input")?;
    let [kh, kw, wcin, cout] = dims4(weight, "conv weight")?;
    if wcin != cin {
        return Err(Error::Shape(format!("kernel expects {wcin} input channels, input has {cin}")));
    }
    if bias.shape() != [cout] {
        return Err(Error::Shape(format!("conv bias must be [{cout}], got {:?}", bias.shape())));
    }
    if h < kh || w < kw {
        return Err(Error::Shape(format!("spatial dims {h}x{w} smaller than kernel {kh}x{kw}")));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = Tensor::zeros(vec![n_batch, oh, ow, cout]);
    let (x, wd, bd, od) = (input.as_slice(), weight.as_slice(), bias.as_slice(), out.as_mut_slice());

    for n in 0..n_batch {
        for y in 0..oh {
            for xo in 0..ow {
                let acc = &mut od[((n * oh + y) * ow + xo) * cout..][..cout];
                acc.copy_from_slice(bd);
                for dy in 0..kh {
                    for dx in 0..kw {
                        let in_base = ((n * h + y + dy) * w + xo + dx) * cin;
                        let w_base = (dy * kw + dx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[in_base + ci];
                            let wrow = &wd[w_base + ci * cout..][..cout];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a = *a + xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    debug_assert!(out.all_finite(), "conv2d_forward produced non-finite values");
    Ok(out)
}

/// Gradients of the convolution with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor<f64>,
    weight: &Tensor<f64>,
    grad_out: &Tensor<f64>,
) -> Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
    let [n_batch, h, w, cin] = dims4(input, "conv input")?;
    let [kh, kw, _, cout] = dims4(weight, "conv weight")?;
    let [gn, oh, ow, gc] = dims4(grad_out, "conv grad")?;
    if gn != n_batch || oh != h - kh + 1 || ow != w - kw + 1 || gc != cout {
        return Err(Error::Shape(format!(
            "conv grad shape {:?} inconsistent with input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let mut grad_in = Tensor::zeros(input.shape().to_vec());
    let mut grad_w = Tensor::zeros(weight.shape().to_vec());
    let mut grad_b = Tensor::zeros(vec![cout]);
    let (x, wd, go) = (input.as_slice(), weight.as_slice(), grad_out.as_slice());
    let (gi, gw, gb) = (grad_in.as_mut_slice(), grad_w.as_mut_slice(), grad_b.as_mut_slice());

    for n in 0..n_batch {
        for y in 0..oh {
            for xo in 0..ow {
                let g = &go[((n * oh + y) * ow + xo) * cout..][..cout];
                for (b, &gv) in gb.iter_mut().zip(g) {
                    *b += gv;
                }
                for dy in 0..kh {
                    for dx in 0..kw {
                        let in_base = ((n * h + y + dy) * w + xo + dx) * cin;
                        let w_base = (dy * kw + dx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[in_base + ci];
                            let wrow = &wd[w_base + ci * cout..][..cout];
                            let gwrow = &mut gw[w_base + ci * cout..][..cout];
                            let mut acc = 0.0;
                            for co in 0..cout {
                                gwrow[co] += xv * g[co];
                                acc += wrow[co] * g[co];
                            }
                            gi[in_base + ci] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

// ── ReLU ─────────────────────────────────────────────────────────────

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    for v in out.as_mut_slice() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor<f64>, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu grad shape {:?} != input shape {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let mut grad_in = grad_out.clone();
    for (g, &x) in grad_in.as_mut_slice().iter_mut().zip(input.as_slice()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad_in)
}

// ── Max pooling ──────────────────────────────────────────────────────

/// Non-overlapping max pooling with window (ph, pw); trailing rows/columns
/// that do not fill a window are dropped. Returns the pooled tensor and the
/// flat input index of each window's (first) maximum for the backward pass.
pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    pool_h: usize,
    pool_w: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n_batch, h, w, c] = dims4(input, "pool input")?;
    if pool_h == 0 || pool_w == 0 || pool_h > h || pool_w > w {
        return Err(Error::Shape(format!(
            "pool window {pool_h}x{pool_w} invalid for input {h}x{w}"
        )));
    }
    let (oh, ow) = (h / pool_h, w / pool_w);
    let mut out = Tensor::zeros(vec![n_batch, oh, ow, c]);
    let mut argmax = vec![0usize; out.len()];
    let x = input.as_slice();
    let od = out.as_mut_slice();

    for n in 0..n_batch {
        for y in 0..oh {
            for xo in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((n * h + y * pool_h) * w + xo * pool_w) * c + ch;
                    let mut best = x[best_idx];
                    for dy in 0..pool_h {
                        for dx in 0..pool_w {
                            let idx = ((n * h + y * pool_h + dy) * w + xo * pool_w + dx) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((n * oh + y) * ow + xo) * c + ch;
                    od[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Route each output gradient to the argmax recorded by the forward pass.
pub fn maxpool2d_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "argmax has {} entries, grad has {}",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut grad_in = Tensor::zeros(input_shape.to_vec());
    let gi = grad_in.as_mut_slice();
    for (&idx, &g) in argmax.iter().zip(grad_out.as_slice()) {
        gi[idx] += g;
    }
    Ok(grad_in)
}

// ── Dense ────────────────────────────────────────────────────────────

/// y = x W + b for a batch of row vectors.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n_batch, in_f] = dims2(input, "dense input")?;
    let [w_in, out_f] = dims2(weight, "dense weight")?;
    if w_in != in_f {
        return Err(Error::Shape(format!("dense weight expects {w_in} inputs, got {in_f}")));
    }
    if bias.shape() != [out_f] {
        return Err(Error::Shape(format!("dense bias must be [{out_f}], got {:?}", bias.shape())));
    }
    let mut out = Tensor::zeros(vec![n_batch, out_f]);
    let (x, wd, bd, od) = (input.as_slice(), weight.as_slice(), bias.as_slice(), out.as_mut_slice());
    for n in 0..n_batch {
        let row = &mut od[n * out_f..][..out_f];
        row.copy_from_slice(bd);
        for i in 0..in_f {
            let xv = x[n * in_f + i];
            let wrow = &wd[i * out_f..][..out_f];
            for (r, &wv) in row.iter_mut().zip(wrow) {
                *r = *r + xv * wv;
            }
        }
    }
    debug_assert!(out.all_finite(), "dense_forward produced non-finite values");
    Ok(out)
}

pub fn dense_backward(
    input: &Tensor<f64>,
    weight: &Tensor<f64>,
    grad_out: &Tensor<f64>,
) -> Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
    let [n_batch, in_f] = dims2(input, "dense input")?;
    let [_, out_f] = dims2(weight, "dense weight")?;
    let [gn, go_f] = dims2(grad_out, "dense grad")?;
    if gn != n_batch || go_f != out_f {
        return Err(Error::Shape(format!(
            "dense grad shape {:?} inconsistent with output [{n_batch}, {out_f}]",
            grad_out.shape()
        )));
    }
    let mut grad_in = Tensor::zeros(vec![n_batch, in_f]);
    let mut grad_w = Tensor::zeros(weight.shape().to_vec());
    let mut grad_b = Tensor::zeros(vec![out_f]);
    let (x, wd, go) = (input.as_slice(), weight.as_slice(), grad_out.as_slice());
    let (gi, gw, gb) = (grad_in.as_mut_slice(), grad_w.as_mut_slice(), grad_b.as_mut_slice());

    for n in 0..n_batch {
        let g = &go[n * out_f..][..out_f];
        for (b, &gv) in gb.iter_mut().zip(g) {
            *b += gv;
        }
        for i in 0..in_f {
            let xv = x[n * in_f + i];
            let wrow = &wd[i * out_f..][..out_f];
            let gwrow = &mut gw[i * out_f..][..out_f];
            let mut acc = 0.0;
            for o in 0..out_f {
                gwrow[o] += xv * g[o];
                acc += wrow[o] * g[o];
            }
            gi[n * in_f + i] = acc;
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

// ── Softmax and cross-entropy ────────────────────────────────────────

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [n_batch, k] = dims2(logits, "logits")?;
    let mut out = logits.clone();
    let od = out.as_mut_slice();
    for n in 0..n_batch {
        let row = &mut od[n * k..][..k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits. For a single-sample batch the gradient is exactly
/// `softmax(logits) - onehot(label)`; batches scale it by 1/batch so it
/// matches the mean loss.
pub fn softmax_cross_entropy(
    logits: &Tensor<f64>,
    labels: &[u16],
) -> Result<(f64, Tensor<f64>)> {
    let [n_batch, k] = dims2(logits, "logits")?;
    if k < 2 {
        return Err(Error::argument(format!("need at least 2 classes, got {k}")));
    }
    if labels.len() != n_batch {
        return Err(Error::argument(format!(
            "{} labels for a batch of {n_batch}",
            labels.len()
        )));
    }
    let mut grad = softmax(logits)?;
    let g = grad.as_mut_slice();
    let x = logits.as_slice();
    let mut loss = 0.0;
    let scale = 1.0 / n_batch as f64;
    for n in 0..n_batch {
        let label = labels[n] as usize;
        if label >= k {
            return Err(Error::argument(format!("label {label} out of range 0..{k}")));
        }
        let row = &x[n * k..][..k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let logsum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += max + logsum - row[label];
        let grow = &mut g[n * k..][..k];
        grow[label] -= 1.0;
        for v in grow.iter_mut() {
            *v *= scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows<T: Scalar>(scores: &Tensor<T>) -> Result<Vec<usize>> {
    let [n_batch, k] = dims2(scores, "scores")?;
    let s = scores.as_slice();
    Ok((0..n_batch)
        .map(|n| {
            let row = &s[n * k..][..k];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

// ── Tests ────────────────────────────────────────────────────────────
