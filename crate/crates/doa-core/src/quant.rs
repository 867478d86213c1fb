//! Word-length emulation: FP64/FP32 inference modes and post-training INT8
//! quantization with integer-accumulator inference, plus cost accounting.
//!
//! The INT8 scheme is per-tensor affine: symmetric (zero-point 0, range
//! +-127) for weights, asymmetric for activations, biases as i32 in units of
//! input_scale * weight_scale. ReLU is fused into the calibrated output
//! range of the preceding layer; max-pooling acts directly on i8 values
//! (order-preserving under a positive scale); the final dense layer's i32
//! accumulator scores feed the argmax directly, so no softmax runs on the
//! integer path. Rounding is half-away-from-zero everywhere, and the
//! requantization multiplier is applied as an f64 product, so the integer
//! path is bit-stable across runs and thread counts.

use crate::error::{Error, Result};
use crate::nn::model::{Layer, Model};
use crate::nn::tensor::Tensor;

/// Numeric precision of a stored or executing model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordLength {
    /// 64-bit double-precision floating point.
    Dpfl,
    /// 32-bit single-precision floating point.
    Spfl,
    /// 8-bit integer weights/activations with i32 accumulators.
    Int8,
}

impl WordLength {
    pub fn tag(self) -> u8 {
        match self {
            WordLength::Dpfl => 0,
            WordLength::Spfl => 1,
            WordLength::Int8 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<WordLength> {
        match tag {
            0 => Some(WordLength::Dpfl),
            1 => Some(WordLength::Spfl),
            2 => Some(WordLength::Int8),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<WordLength> {
        match s.to_ascii_lowercase().as_str() {
            "dpfl" | "fp64" | "f64" => Some(WordLength::Dpfl),
            "spfl" | "fp32" | "f32" => Some(WordLength::Spfl),
            "int8" | "i8" => Some(WordLength::Int8),
            _ => None,
        }
    }
}

impl std::fmt::Display for WordLength {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WordLength::Dpfl => "dpfl",
            WordLength::Spfl => "spfl",
            WordLength::Int8 => "int8",
        })
    }
}

// ── Quantization parameters ──────────────────────────────────────────

/// Per-tensor affine map between reals and i8: q = round(x/scale) + zp.
/// The scale is stored as f32 (its serialized width) and widened to f64 for
/// arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    /// Asymmetric params covering [min, max]. The range is extended to
    /// include zero so the zero point stays a representable i8 (values far
    /// from zero would otherwise clamp it and break the affine map), and
    /// degenerate ranges are widened by a fixed guard so the scale stays
    /// positive.
    pub fn from_range(mut min: f64, mut max: f64) -> QuantParams {
        min = min.min(0.0);
        max = max.max(0.0);
        if !(max - min).is_finite() || max - min < 1e-12 {
            min -= 0.5;
            max += 0.5;
        }
        let scale = (max - min) / 255.0;
        let zero_point = (-128.0 - min / scale).round().clamp(-128.0, 127.0) as i32;
        QuantParams { scale: scale as f32, zero_point }
    }

    /// Symmetric params for a weight tensor: scale = max|w| / 127, zp = 0.
    pub fn symmetric(max_abs: f64) -> QuantParams {
        let guarded = if max_abs.is_finite() && max_abs > 1e-12 { max_abs } else { 1.0 };
        QuantParams { scale: (guarded / 127.0) as f32, zero_point: 0 }
    }

    pub fn quantize(&self, x: f64) -> i8 {
        let q = (x / self.scale as f64).round() + self.zero_point as f64;
        q.clamp(-128.0, 127.0) as i8
    }

    pub fn dequantize(&self, q: i8) -> f64 {
        (q as i32 - self.zero_point) as f64 * self.scale as f64
    }
}

// ── Activation calibration ───────────────────────────────────────────

/// Min/max of the input plane and of every layer output over a calibration
/// batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRanges {
    pub input: (f64, f64),
    /// `after_layer[i]` covers the output of `model.layers[i]`.
    pub after_layer: Vec<(f64, f64)>,
}

fn minmax(t: &Tensor<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in t.as_slice() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn merge(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.min(b.0), a.1.max(b.1))
}

/// Record per-layer activation ranges by running the 64-bit forward pass
/// over a calibration batch (at least 32 samples).
pub fn calibrate(model: &Model, calibration: &Tensor<f64>) -> Result<ActivationRanges> {
    let n = *calibration
        .shape()
        .first()
        .ok_or_else(|| Error::argument("empty calibration tensor".to_string()))?;
    if n < 32 {
        return Err(Error::argument(format!("need at least 32 calibration samples, got {n}")));
    }
    model.validate()?;

    let mut input = (f64::INFINITY, f64::NEG_INFINITY);
    let mut after = vec![(f64::INFINITY, f64::NEG_INFINITY); model.layers.len()];

    let mut start = 0;
    while start < n {
        let end = (start + 128).min(n);
        let mut current = calibration.batch_rows(start, end)?;
        input = merge(input, minmax(&current));
        for (i, layer) in model.layers.iter().enumerate() {
            current = match layer {
                Layer::Conv2d { weight, bias } => {
                    crate::nn::ops::conv2d_forward(&current, weight, bias)?
                }
                Layer::Relu => crate::nn::ops::relu_forward(&current),
                Layer::MaxPool2d { pool_h, pool_w } => {
                    crate::nn::ops::maxpool2d_forward(&current, *pool_h, *pool_w)?.0
                }
                Layer::Flatten => {
                    let batch = current.shape()[0];
                    let features = current.len() / batch;
                    current.reshape(vec![batch, features])?
                }
                Layer::Dense { weight, bias } => {
                    crate::nn::ops::dense_forward(&current, weight, bias)?
                }
                Layer::Softmax => crate::nn::ops::softmax(&current)?,
            };
            after[i] = merge(after[i], minmax(&current));
        }
        start = end;
    }
    Ok(ActivationRanges { input, after_layer: after })
}

// ── Quantized model ──────────────────────────────────────────────────

/// Dense i8 buffer with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantLayer {
    Conv2d {
        weight: QTensor,
        weight_scale: f32,
        bias: Vec<i32>,
        /// Calibrated output params; ReLU is folded into this range.
        out: QuantParams,
    },
    MaxPool2d {
        pool_h: usize,
        pool_w: usize,
    },
    Flatten,
    Dense {
        weight: QTensor,
        weight_scale: f32,
        bias: Vec<i32>,
        /// `None` on the final layer: its i32 scores feed the argmax.
        out: Option<QuantParams>,
    },
}

/// INT8 model: i8 weights, i32 biases, per-boundary activation params.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub input: QuantParams,
    pub layers: Vec<QuantLayer>,
}

fn quantize_weights(weight: &Tensor<f64>) -> (QTensor, f32) {
    let max_abs = weight.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let params = QuantParams::symmetric(max_abs);
    let data = weight.as_slice().iter().map(|&w| params.quantize(w)).collect();
    (QTensor { shape: weight.shape().to_vec(), data }, params.scale)
}

fn quantize_bias(bias: &Tensor<f64>, input_scale: f64, weight_scale: f64) -> Vec<i32> {
    let unit = input_scale * weight_scale;
    bias.as_slice()
        .iter()
        .map(|&b| (b / unit).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect()
}

/// Convert a trained model to per-tensor affine INT8 using calibrated
/// activation ranges.
pub fn quantize_model(model: &Model, ranges: &ActivationRanges) -> Result<QuantizedModel> {
    if ranges.after_layer.len() != model.layers.len() {
        return Err(Error::argument(format!(
            "ranges cover {} layers, model has {}",
            ranges.after_layer.len(),
            model.layers.len()
        )));
    }
    let input_qp = QuantParams::from_range(ranges.input.0, ranges.input.1);
    let mut layers = Vec::new();
    let mut in_scale = input_qp.scale as f64;

    let stack = &model.layers;
    let mut i = 0;
    while i < stack.len() {
        match &stack[i] {
            Layer::Conv2d { weight, bias } => {
                // Fuse the following ReLU into the calibrated output range.
                let fused_relu = matches!(stack.get(i + 1), Some(Layer::Relu));
                let range_idx = if fused_relu { i + 1 } else { i };
                let (lo, hi) = ranges.after_layer[range_idx];
                let out = QuantParams::from_range(lo, hi);
                let (wq, ws) = quantize_weights(weight);
                let bq = quantize_bias(bias, in_scale, ws as f64);
                layers.push(QuantLayer::Conv2d { weight: wq, weight_scale: ws, bias: bq, out });
                in_scale = out.scale as f64;
                i += if fused_relu { 2 } else { 1 };
            }
            Layer::Dense { weight, bias } => {
                let fused_relu = matches!(stack.get(i + 1), Some(Layer::Relu));
                let is_last = !stack[i + 1..]
                    .iter()
                    .any(|l| matches!(l, Layer::Dense { .. } | Layer::Conv2d { .. }));
                let (wq, ws) = quantize_weights(weight);
                let bq = quantize_bias(bias, in_scale, ws as f64);
                let out = if is_last {
                    None
                } else {
                    let range_idx = if fused_relu { i + 1 } else { i };
                    let (lo, hi) = ranges.after_layer[range_idx];
                    let qp = QuantParams::from_range(lo, hi);
                    in_scale = qp.scale as f64;
                    Some(qp)
                };
                layers.push(QuantLayer::Dense { weight: wq, weight_scale: ws, bias: bq, out });
                i += if fused_relu { 2 } else { 1 };
            }
            Layer::MaxPool2d { pool_h, pool_w } => {
                layers.push(QuantLayer::MaxPool2d { pool_h: *pool_h, pool_w: *pool_w });
                i += 1;
            }
            Layer::Flatten => {
                layers.push(QuantLayer::Flatten);
                i += 1;
            }
            Layer::Relu | Layer::Softmax => {
                i += 1;
            }
        }
    }

    Ok(QuantizedModel {
        input_shape: model.input_shape,
        class_count: model.class_count,
        input: input_qp,
        layers,
    })
}

// ── Integer inference ────────────────────────────────────────────────

fn narrow_accumulator(acc: i64) -> Result<i32> {
    if cfg!(debug_assertions) {
        i32::try_from(acc).map_err(|_| Error::Numeric(format!("i32 accumulator overflow: {acc}")))
    } else {
        Ok(acc.clamp(i32::MIN as i64, i32::MAX as i64) as i32)
    }
}

fn requantize(acc: i32, multiplier: f64, zp_out: i32) -> i8 {
    ((acc as f64 * multiplier).round() + zp_out as f64).clamp(-128.0, 127.0) as i8
}

/// Integer convolution producing raw i32 accumulators (bias included); the
/// input's zero point is subtracted term by term, weights are symmetric.
pub fn conv2d_int8(
    input: &[i8],
    shape: [usize; 4],
    zp_in: i32,
    weight: &QTensor,
    bias: &[i32],
) -> Result<(Vec<i32>, [usize; 4])> {
    let [n_batch, h, w, cin] = shape;
    let [kh, kw, wcin, cout] = match weight.shape.as_slice() {
        [a, b, c, d] => [*a, *b, *c, *d],
        s => return Err(Error::Shape(format!("conv weight must be 4-d, got {s:?}"))),
    };
    if wcin != cin || bias.len() != cout || h < kh || w < kw {
        return Err(Error::Shape(format!(
            "int8 conv mismatch: input {shape:?}, kernel {:?}",
            weight.shape
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0i32; n_batch * oh * ow * cout];
    for n in 0..n_batch {
        for y in 0..oh {
            for xo in 0..ow {
                let base = ((n * oh + y) * ow + xo) * cout;
                for co in 0..cout {
                    let mut acc = bias[co] as i64;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let in_base = ((n * h + y + dy) * w + xo + dx) * cin;
                            let w_base = ((dy * kw + dx) * cin) * cout + co;
                            for ci in 0..cin {
                                let x = input[in_base + ci] as i64 - zp_in as i64;
                                let wv = weight.data[w_base + ci * cout] as i64;
                                acc += x * wv;
                            }
                        }
                    }
                    out[base + co] = narrow_accumulator(acc)?;
                }
            }
        }
    }
    Ok((out, [n_batch, oh, ow, cout]))
}

/// Integer dense layer producing raw i32 accumulators (bias included).
pub fn dense_int8(
    input: &[i8],
    shape: [usize; 2],
    zp_in: i32,
    weight: &QTensor,
    bias: &[i32],
) -> Result<(Vec<i32>, [usize; 2])> {
    let [n_batch, in_f] = shape;
    let [w_in, out_f] = match weight.shape.as_slice() {
        [a, b] => [*a, *b],
        s => return Err(Error::Shape(format!("dense weight must be 2-d, got {s:?}"))),
    };
    if w_in != in_f || bias.len() != out_f {
        return Err(Error::Shape(format!(
            "int8 dense mismatch: input {shape:?}, weight {:?}",
            weight.shape
        )));
    }
    let mut out = vec![0i32; n_batch * out_f];
    for n in 0..n_batch {
        for o in 0..out_f {
            let mut acc = bias[o] as i64;
            for i in 0..in_f {
                let x = input[n * in_f + i] as i64 - zp_in as i64;
                acc += x * weight.data[i * out_f + o] as i64;
            }
            out[n * out_f + o] = narrow_accumulator(acc)?;
        }
    }
    Ok((out, [n_batch, out_f]))
}

/// Quantize a real batch with the model's input params and run the integer
/// path; returns argmax class indices from the final i32 scores.
pub fn quantized_inference(qmodel: &QuantizedModel, batch: &Tensor<f64>) -> Result<Vec<usize>> {
    let shape = batch.shape();
    if shape.len() != 4
        || shape[1] != qmodel.input_shape[0]
        || shape[2] != qmodel.input_shape[1]
        || shape[3] != qmodel.input_shape[2]
    {
        return Err(Error::Shape(format!(
            "input batch {shape:?} does not match model input {:?}",
            qmodel.input_shape
        )));
    }
    let n_batch = shape[0];
    let mut data: Vec<i8> = batch.as_slice().iter().map(|&x| qmodel.input.quantize(x)).collect();
    let mut dims = [n_batch, shape[1], shape[2], shape[3]];
    let mut qp = qmodel.input;
    let mut flat_dims: Option<[usize; 2]> = None;
    let mut final_scores: Option<(Vec<i32>, [usize; 2])> = None;

    for (li, layer) in qmodel.layers.iter().enumerate() {
        match layer {
            QuantLayer::Conv2d { weight, weight_scale, bias, out } => {
                let (acc, new_dims) = conv2d_int8(&data, dims, qp.zero_point, weight, bias)?;
                let multiplier = qp.scale as f64 * *weight_scale as f64 / out.scale as f64;
                data = acc.into_iter().map(|a| requantize(a, multiplier, out.zero_point)).collect();
                dims = new_dims;
                qp = *out;
            }
            QuantLayer::MaxPool2d { pool_h, pool_w } => {
                let [n, h, w, c] = dims;
                if *pool_h > h || *pool_w > w {
                    return Err(Error::Shape(format!("layer {li}: pool window exceeds {h}x{w}")));
                }
                let (oh, ow) = (h / pool_h, w / pool_w);
                let mut pooled = vec![0i8; n * oh * ow * c];
                for ni in 0..n {
                    for y in 0..oh {
                        for xo in 0..ow {
                            for ch in 0..c {
                                let mut best = i8::MIN;
                                for dy in 0..*pool_h {
                                    for dx in 0..*pool_w {
                                        let idx = ((ni * h + y * pool_h + dy) * w
                                            + xo * pool_w
                                            + dx)
                                            * c
                                            + ch;
                                        best = best.max(data[idx]);
                                    }
                                }
                                pooled[((ni * oh + y) * ow + xo) * c + ch] = best;
                            }
                        }
                    }
                }
                data = pooled;
                dims = [n, oh, ow, c];
            }
            QuantLayer::Flatten => {
                flat_dims = Some([dims[0], dims[1] * dims[2] * dims[3]]);
            }
            QuantLayer::Dense { weight, weight_scale, bias, out } => {
                let shape2 =
                    flat_dims.take().unwrap_or([dims[0], dims[1] * dims[2] * dims[3]]);
                let (acc, new_dims) = dense_int8(&data, shape2, qp.zero_point, weight, bias)?;
                match out {
                    Some(out_qp) => {
                        let multiplier =
                            qp.scale as f64 * *weight_scale as f64 / out_qp.scale as f64;
                        data = acc
                            .into_iter()
                            .map(|a| requantize(a, multiplier, out_qp.zero_point))
                            .collect();
                        flat_dims = Some(new_dims);
                        qp = *out_qp;
                    }
                    None => {
                        final_scores = Some((acc, new_dims));
                    }
                }
            }
        }
    }

    let (scores, [n, k]) = final_scores
        .ok_or_else(|| Error::Shape("quantized stack has no final dense layer".to_string()))?;
    Ok((0..n)
        .map(|row| {
            let r = &scores[row * k..(row + 1) * k];
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

// ── Cost accounting ──────────────────────────────────────────────────

/// Multiply-accumulate count, weight-payload flash size, and peak activation
/// RAM for one word length. `wall_time_ms` is measured by callers that time
/// an inference pass; it is informational only.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub word_length: WordLength,
    pub mac_count: u64,
    pub flash_bytes: u64,
    pub ram_bytes: u64,
    pub wall_time_ms: Option<f64>,
}

/// Per-sample multiply-accumulates: convolutions contribute
/// out_h*out_w*out_c*kh*kw*in_c, dense layers in*out; pooling and
/// activations are excluded.
pub fn count_macs(model: &Model) -> Result<u64> {
    let chain = model.validate()?;
    let mut macs = 0u64;
    for (i, layer) in model.layers.iter().enumerate() {
        match layer {
            Layer::Conv2d { weight, .. } => {
                let out = &chain[i + 1];
                let k: u64 = weight.shape()[..3].iter().product::<usize>() as u64;
                macs += out[1..].iter().product::<usize>() as u64 * k;
            }
            Layer::Dense { weight, .. } => {
                macs += weight.len() as u64;
            }
            _ => {}
        }
    }
    Ok(macs)
}

fn weight_bytes_per_element(wl: WordLength) -> u64 {
    match wl {
        WordLength::Dpfl => 8,
        WordLength::Spfl => 4,
        WordLength::Int8 => 1,
    }
}

fn bias_bytes_per_element(wl: WordLength) -> u64 {
    match wl {
        WordLength::Dpfl => 8,
        WordLength::Spfl => 4,
        WordLength::Int8 => 4, // i32 biases
    }
}

/// Serialized weight payload per parametric tensor (weights only, no
/// biases), in layer order.
pub fn per_tensor_weight_bytes(model: &Model, wl: WordLength) -> Vec<u64> {
    model
        .layers
        .iter()
        .filter_map(|layer| match layer {
            Layer::Conv2d { weight, .. } | Layer::Dense { weight, .. } => {
                Some(weight.len() as u64 * weight_bytes_per_element(wl))
            }
            _ => None,
        })
        .collect()
}

/// Flash = weight + bias payloads (+8 bytes per stored quant-param pair for
/// INT8); RAM = peak of live input + output activation bytes across the
/// stack for one sample.
pub fn estimate_footprint(model: &Model, wl: WordLength) -> Result<CostReport> {
    let chain = model.validate()?;
    let mut flash = 0u64;
    let mut quantized_tensors = 0u64;
    for layer in &model.layers {
        if let Layer::Conv2d { weight, bias } | Layer::Dense { weight, bias } = layer {
            flash += weight.len() as u64 * weight_bytes_per_element(wl);
            flash += bias.len() as u64 * bias_bytes_per_element(wl);
            quantized_tensors += 1;
        }
    }
    if wl == WordLength::Int8 {
        // Scale f32 + zero-point i32 per weight tensor, per fused activation
        // boundary, and for the input.
        flash += 8 * (quantized_tensors + quantized_tensors);
    }

    let act_bytes = weight_bytes_per_element(wl); // activations share the element width
    let mut ram = 0u64;
    for pair in chain.windows(2) {
        let live = (pair[0].iter().product::<usize>() + pair[1].iter().product::<usize>()) as u64;
        ram = ram.max(live * act_bytes);
    }

    Ok(CostReport {
        word_length: wl,
        mac_count: count_macs(model)?,
        flash_bytes: flash,
        ram_bytes: ram,
        wall_time_ms: None,
    })
}

// ── Tests ────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ArchConfig;
    use proptest::prelude::*;

    #[test]
    fn symmetric_scale_is_max_abs_over_127() {
        let qp = QuantParams::symmetric(2.54);
        assert!((qp.scale as f64 - 2.54 / 127.0).abs() < 1e-9);
        assert_eq!(qp.zero_point, 0);
    }

    #[test]
    fn ternary_weights_quantize_without_loss() {
        let qp = QuantParams::symmetric(1.0);
        for w in [-1.0, 0.0, 1.0] {
            let back = qp.dequantize(qp.quantize(w));
            // Exact up to the f32 scale representation.
            assert!((back - w).abs() < 2e-7, "{w} -> {back}");
        }
    }

    #[test]
    fn degenerate_range_is_widened_not_crashed() {
        let qp = QuantParams::from_range(0.0, 0.0);
        assert!(qp.scale > 0.0);
        assert_eq!(qp.dequantize(qp.quantize(0.0)), 0.0);
    }

    proptest! {
        #[test]
        fn roundtrip_error_is_bounded_by_half_a_scale(
            min in -100.0f64..0.0,
            width in 0.1f64..200.0,
            xs in proptest::collection::vec(0.0f64..1.0, 1..50),
        ) {
            let qp = QuantParams::from_range(min, min + width);
            let s = qp.scale as f64;
            for t in xs {
                let x = min + t * width;
                let err = (x - qp.dequantize(qp.quantize(x))).abs();
                // Half a quantum plus the f32 scale representation slack.
                prop_assert!(err <= s * 0.5 + s * 1e-6, "x={x} err={err} scale={s}");
            }
        }

        #[test]
        fn quantize_is_monotone(
            a in -50.0f64..50.0,
            b in -50.0f64..50.0,
        ) {
            let qp = QuantParams::from_range(-50.0, 50.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(qp.quantize(lo) <= qp.quantize(hi));
        }
    }

    fn tiny_model(seed: u64) -> Model {
        Model::build([4, 16, 1], 4, &ArchConfig::default(), seed).unwrap()
    }

    fn random_batch(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = crate::seed::stream_rng(seed, crate::seed::Domain::Envelope, 0);
        use rand::Rng;
        let data = (0..n * 4 * 16).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::new(vec![n, 4, 16, 1], data).unwrap()
    }

    #[test]
    fn calibration_requires_32_samples_and_is_monotone() {
        let model = tiny_model(1);
        assert!(calibrate(&model, &random_batch(31, 2)).is_err());

        let small = calibrate(&model, &random_batch(32, 2)).unwrap();
        // A superset batch (same 32 plus more) can only widen ranges.
        let mut both = random_batch(32, 2).as_slice().to_vec();
        both.extend_from_slice(random_batch(32, 3).as_slice());
        let superset = calibrate(&model, &Tensor::new(vec![64, 4, 16, 1], both).unwrap()).unwrap();
        assert!(superset.input.0 <= small.input.0 && superset.input.1 >= small.input.1);
        for (s, b) in small.after_layer.iter().zip(&superset.after_layer) {
            assert!(b.0 <= s.0 && b.1 >= s.1);
        }
    }

    #[test]
    fn constant_zero_batch_calibrates_via_the_guard() {
        let model = tiny_model(3);
        let zeros = Tensor::zeros(vec![32, 4, 16, 1]);
        let ranges = calibrate(&model, &zeros).unwrap();
        assert_eq!(ranges.input, (0.0, 0.0));
        let q = quantize_model(&model, &ranges).unwrap();
        assert!(q.input.scale > 0.0);
    }

    #[test]
    fn quantized_weights_round_trip_within_half_a_scale() {
        let model = tiny_model(5);
        let ranges = calibrate(&model, &random_batch(64, 7)).unwrap();
        let q = quantize_model(&model, &ranges).unwrap();
        let mut checked = 0;
        for (layer, qlayer) in model
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv2d { .. } | Layer::Dense { .. }))
            .zip(q.layers.iter().filter(|l| {
                matches!(l, QuantLayer::Conv2d { .. } | QuantLayer::Dense { .. })
            }))
        {
            let (w, wq, ws) = match (layer, qlayer) {
                (
                    Layer::Conv2d { weight, .. },
                    QuantLayer::Conv2d { weight: wq, weight_scale, .. },
                )
                | (
                    Layer::Dense { weight, .. },
                    QuantLayer::Dense { weight: wq, weight_scale, .. },
                ) => (weight, wq, *weight_scale as f64),
                _ => unreachable!(),
            };
            for (&orig, &q8) in w.as_slice().iter().zip(&wq.data) {
                let back = q8 as f64 * ws;
                assert!((orig - back).abs() <= ws * 0.5 + ws * 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn identity_conv_with_unit_scales_passes_values_through() {
        let weight = QTensor { shape: vec![1, 1, 1, 1], data: vec![1] };
        let input: Vec<i8> = vec![-5, 0, 3, 127];
        let (acc, dims) = conv2d_int8(&input, [1, 2, 2, 1], 0, &weight, &[0]).unwrap();
        assert_eq!(dims, [1, 2, 2, 1]);
        let out: Vec<i8> = acc.iter().map(|&a| requantize(a, 1.0, 0)).collect();
        assert_eq!(out, input);
    }

    #[test]
    fn int8_layer_tracks_fp_within_three_quanta() {
        use rand::Rng;
        let mut rng = crate::seed::stream_rng(11, crate::seed::Domain::Envelope, 1);
        for _ in 0..20 {
            let (h, w, cin, cout) = (
                rng.random_range(3..6),
                rng.random_range(3..8),
                rng.random_range(1..3),
                rng.random_range(1..4),
            );
            let x_data: Vec<f64> = (0..h * w * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w_data: Vec<f64> =
                (0..4 * cin * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::new(vec![1, h, w, cin], x_data).unwrap();
            let wt = Tensor::new(vec![2, 2, cin, cout], w_data).unwrap();
            let b = Tensor::zeros(vec![cout]);

            let fp = crate::nn::ops::conv2d_forward(&x, &wt, &b).unwrap();
            let (fp_lo, fp_hi) = minmax(&fp);

            let in_qp = QuantParams::from_range(-1.0, 1.0);
            let out_qp = QuantParams::from_range(fp_lo, fp_hi);
            let (wq, ws) = quantize_weights(&wt);
            let xq: Vec<i8> = x.as_slice().iter().map(|&v| in_qp.quantize(v)).collect();
            let (acc, _) =
                conv2d_int8(&xq, [1, h, w, cin], in_qp.zero_point, &wq, &vec![0; cout]).unwrap();
            let multiplier = in_qp.scale as f64 * ws as f64 / out_qp.scale as f64;
            for (&a, &f) in acc.iter().zip(fp.as_slice()) {
                let deq = out_qp.dequantize(requantize(a, multiplier, out_qp.zero_point));
                assert!(
                    (deq - f).abs() <= 3.0 * out_qp.scale as f64,
                    "int8 {deq} vs fp {f} (scale {})",
                    out_qp.scale
                );
            }
        }
    }

    #[test]
    fn quantized_inference_is_deterministic_and_total() {
        let model = tiny_model(13);
        let batch = random_batch(40, 17);
        let ranges = calibrate(&model, &batch).unwrap();
        let q = quantize_model(&model, &ranges).unwrap();
        let a = quantized_inference(&q, &batch).unwrap();
        let b = quantized_inference(&q, &batch).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        assert!(a.iter().all(|&c| c < 4));
    }

    #[test]
    fn mac_counts_match_hand_arithmetic() {
        // Single dense 10 -> 5.
        let dense_only = Model {
            input_shape: [1, 10, 1],
            class_count: 5,
            layers: vec![
                Layer::Flatten,
                Layer::Dense { weight: Tensor::zeros(vec![10, 5]), bias: Tensor::zeros(vec![5]) },
                Layer::Softmax,
            ],
        };
        assert_eq!(count_macs(&dense_only).unwrap(), 50);

        // Default stack on the L=2, d=128, K=8 input.
        let model = Model::build([4, 128, 1], 8, &ArchConfig::default(), 1).unwrap();
        let conv1 = 3 * 127 * 16 * (2 * 2 * 1) as u64;
        assert_eq!(conv1, 24_384);
        let conv2 = 2 * 62 * 32 * (2 * 2 * 16) as u64;
        let dense1 = (31 * 32 * 128) as u64;
        let dense2 = (128 * 8) as u64;
        assert_eq!(count_macs(&model).unwrap(), conv1 + conv2 + dense1 + dense2);
        assert_eq!(count_macs(&model).unwrap(), 406_336);
    }

    #[test]
    fn flash_scales_with_word_length() {
        let model = tiny_model(19);
        let fp32 = per_tensor_weight_bytes(&model, WordLength::Spfl);
        let int8 = per_tensor_weight_bytes(&model, WordLength::Int8);
        assert_eq!(fp32.len(), 4);
        for (f, i) in fp32.iter().zip(&int8) {
            assert_eq!(*f, 4 * i);
        }

        let r64 = estimate_footprint(&model, WordLength::Dpfl).unwrap();
        let r32 = estimate_footprint(&model, WordLength::Spfl).unwrap();
        let r8 = estimate_footprint(&model, WordLength::Int8).unwrap();
        assert!(r8.flash_bytes < r32.flash_bytes && r32.flash_bytes < r64.flash_bytes);
        assert!(r8.flash_bytes as f64 <= 0.30 * r32.flash_bytes as f64);
        assert!(r8.ram_bytes < r32.ram_bytes);
        assert_eq!(r32.mac_count, r8.mac_count);
    }

    #[test]
    fn hundred_fp32_weights_occupy_400_bytes() {
        let model = Model {
            input_shape: [1, 20, 1],
            class_count: 5,
            layers: vec![
                Layer::Flatten,
                Layer::Dense { weight: Tensor::zeros(vec![20, 5]), bias: Tensor::zeros(vec![5]) },
                Layer::Softmax,
            ],
        };
        assert_eq!(per_tensor_weight_bytes(&model, WordLength::Spfl), vec![400]);
        assert_eq!(per_tensor_weight_bytes(&model, WordLength::Int8), vec![100]);
    }
}
