//! The micro-CNN: two 2x2 convolutions with ReLU, two max-pool layers in
//! between, and two dense layers ending in a softmax head.
//!
//! Input is the real-packed observation plane (2L, d, 1). Pool windows adapt
//! to the antenna-axis extent so the stack stays valid for every supported
//! (L, d): a pool dimension is 2 only if the layers after it still see at
//! least their minimum extent, otherwise it degrades to 1. All shape
//! checking happens at build/validation time, never mid-training.

use crate::error::{Error, Result};
use crate::nn::ops::{
    argmax_rows, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, softmax,
};
use crate::nn::tensor::{Scalar, Tensor};
use crate::seed::{stream_rng, Domain};
use rand::Rng;

/// One layer of the network. Weight layouts: conv kernels are HWIO
/// (kh, kw, cin, cout), dense weights are (in, out).
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f64> {
    Conv2d { weight: Tensor<T>, bias: Tensor<T> },
    Relu,
    MaxPool2d { pool_h: usize, pool_w: usize },
    Flatten,
    Dense { weight: Tensor<T>, bias: Tensor<T> },
    Softmax,
}

/// Channel and unit counts for the parametric layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub hidden_units: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { conv1_filters: 16, conv2_filters: 32, hidden_units: 128 }
    }
}

/// Trained or trainable network with 64-bit master weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// (height, width, channels) of one input sample: (2L, d, 1).
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub layers: Vec<Layer<f64>>,
}

/// Activations captured by a cached forward pass, for backprop.
pub struct ForwardCache {
    /// `inputs[i]` is the tensor fed to `layers[i]`; the final entry is the
    /// logits (the softmax head is excluded from cached passes).
    pub inputs: Vec<Tensor<f64>>,
    /// Pool argmaxes recorded per layer index.
    pub pool_argmax: Vec<Option<Vec<usize>>>,
}

impl Model {
    /// Assemble and initialize the fixed 7-layer stack (conv, pool, conv,
    /// pool, dense, dense, softmax head) for the given input plane and class
    /// count. Weights are fan-in-scaled uniform draws from `seed`; biases
    /// start at zero.
    pub fn build(
        input_shape: [usize; 3],
        class_count: usize,
        arch: &ArchConfig,
        seed: u64,
    ) -> Result<Model> {
        let [h0, w0, c0] = input_shape;
        if class_count < 2 {
            return Err(Error::Shape(format!("need at least 2 classes, got {class_count}")));
        }
        if c0 != 1 {
            return Err(Error::Shape(format!("input must have 1 channel, got {c0}")));
        }
        if arch.conv1_filters == 0 || arch.conv2_filters == 0 || arch.hidden_units == 0 {
            return Err(Error::Shape("architecture sizes must be nonzero".to_string()));
        }

        // Conv 1 (2x2 valid).
        if h0 < 2 || w0 < 2 {
            return Err(Error::Shape(format!("input plane {h0}x{w0} too small for a 2x2 kernel")));
        }
        let (h1, w1) = (h0 - 1, w0 - 1);
        // Pool 1: keep enough height for conv 2.
        let p1h = if h1 / 2 >= 2 { 2 } else { 1 };
        let p1w = if w1 / 2 >= 2 { 2 } else { 1 };
        let (h2, w2) = (h1 / p1h, w1 / p1w);
        // Conv 2 (2x2 valid).
        if h2 < 2 || w2 < 2 {
            return Err(Error::Shape(format!(
                "plane shrank to {h2}x{w2} before the second convolution"
            )));
        }
        let (h3, w3) = (h2 - 1, w2 - 1);
        // Pool 2.
        let p2h = if h3 >= 2 { 2 } else { 1 };
        let p2w = if w3 >= 2 { 2 } else { 1 };
        let (h4, w4) = (h3 / p2h, w3 / p2w);
        let flat = h4 * w4 * arch.conv2_filters;

        let mut rng = stream_rng(seed, Domain::WeightInit, 0);
        let mut uniform_init = |shape: Vec<usize>, fan_in: usize| -> Tensor<f64> {
            let bound = (6.0 / fan_in as f64).sqrt();
            let count = shape.iter().product();
            let data = (0..count).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(shape, data).expect("init shape is consistent")
        };

        let layers = vec![
            Layer::Conv2d {
                weight: uniform_init(vec![2, 2, 1, arch.conv1_filters], 4),
                bias: Tensor::zeros(vec![arch.conv1_filters]),
            },
            Layer::Relu,
            Layer::MaxPool2d { pool_h: p1h, pool_w: p1w },
            Layer::Conv2d {
                weight: uniform_init(
                    vec![2, 2, arch.conv1_filters, arch.conv2_filters],
                    4 * arch.conv1_filters,
                ),
                bias: Tensor::zeros(vec![arch.conv2_filters]),
            },
            Layer::Relu,
            Layer::MaxPool2d { pool_h: p2h, pool_w: p2w },
            Layer::Flatten,
            Layer::Dense {
                weight: uniform_init(vec![flat, arch.hidden_units], flat),
                bias: Tensor::zeros(vec![arch.hidden_units]),
            },
            Layer::Relu,
            Layer::Dense {
                weight: uniform_init(vec![arch.hidden_units, class_count], arch.hidden_units),
                bias: Tensor::zeros(vec![class_count]),
            },
            Layer::Softmax,
        ];

        let model = Model { input_shape, class_count, layers };
        model.validate()?;
        Ok(model)
    }

    /// Walk the layer stack with a batch-1 probe and return the shape after
    /// each layer. Any incompatibility surfaces here as a shape error.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = vec![1, self.input_shape[0], self.input_shape[1], self.input_shape[2]];
        let mut chain = vec![shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                Layer::Conv2d { weight, bias } => {
                    let [kh, kw, cin, cout] = match weight.shape() {
                        [a, b, c, d] => [*a, *b, *c, *d],
                        s => return Err(Error::Shape(format!("layer {i}: bad kernel rank {s:?}"))),
                    };
                    if shape.len() != 4 || shape[3] != cin || shape[1] < kh || shape[2] < kw {
                        return Err(Error::Shape(format!(
                            "layer {i}: conv {kh}x{kw}x{cin}->{cout} cannot take input {shape:?}"
                        )));
                    }
                    if bias.shape() != [cout] {
                        return Err(Error::Shape(format!("layer {i}: conv bias mismatch")));
                    }
                    vec![shape[0], shape[1] - kh + 1, shape[2] - kw + 1, cout]
                }
                Layer::Relu => shape,
                Layer::MaxPool2d { pool_h, pool_w } => {
                    if shape.len() != 4 || shape[1] < *pool_h || shape[2] < *pool_w {
                        return Err(Error::Shape(format!(
                            "layer {i}: pool {pool_h}x{pool_w} cannot take input {shape:?}"
                        )));
                    }
                    vec![shape[0], shape[1] / pool_h, shape[2] / pool_w, shape[3]]
                }
                Layer::Flatten => {
                    vec![shape[0], shape[1..].iter().product()]
                }
                Layer::Dense { weight, bias } => {
                    let [w_in, w_out] = match weight.shape() {
                        [a, b] => [*a, *b],
                        s => return Err(Error::Shape(format!("layer {i}: bad dense rank {s:?}"))),
                    };
                    if shape.len() != 2 || shape[1] != w_in {
                        return Err(Error::Shape(format!(
                            "layer {i}: dense {w_in}->{w_out} cannot take input {shape:?}"
                        )));
                    }
                    if bias.shape() != [w_out] {
                        return Err(Error::Shape(format!("layer {i}: dense bias mismatch")));
                    }
                    vec![shape[0], w_out]
                }
                Layer::Softmax => shape,
            };
            chain.push(shape.clone());
        }
        let last = chain.last().expect("nonempty chain");
        if last.len() != 2 || last[1] != self.class_count {
            return Err(Error::Shape(format!(
                "stack ends in {last:?}, expected [_, {}]",
                self.class_count
            )));
        }
        Ok(chain)
    }

    /// Trainable parameter tensors in a fixed order (weight then bias per
    /// parametric layer).
    pub fn params(&self) -> Vec<&Tensor<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv2d { weight, bias } | Layer::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d { weight, bias } | Layer::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Copy of the layer stack at another precision.
    pub fn cast_layers<T: Scalar>(&self) -> Vec<Layer<T>> {
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv2d { weight, bias } => {
                    Layer::Conv2d { weight: weight.cast(), bias: bias.cast() }
                }
                Layer::Dense { weight, bias } => {
                    Layer::Dense { weight: weight.cast(), bias: bias.cast() }
                }
                Layer::Relu => Layer::Relu,
                Layer::MaxPool2d { pool_h, pool_w } => {
                    Layer::MaxPool2d { pool_h: *pool_h, pool_w: *pool_w }
                }
                Layer::Flatten => Layer::Flatten,
                Layer::Softmax => Layer::Softmax,
            })
            .collect()
    }

    /// Forward pass that records every layer input for backprop. Stops at
    /// the logits; the softmax head is fused into the loss.
    pub fn forward_cached(&self, input: &Tensor<f64>) -> Result<ForwardCache> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_argmax = vec![None; self.layers.len()];
        let mut current = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) {
                break;
            }
            inputs.push(current.clone());
            current = match layer {
                Layer::Conv2d { weight, bias } => conv2d_forward(&current, weight, bias)?,
                Layer::Relu => relu_forward(&current),
                Layer::MaxPool2d { pool_h, pool_w } => {
                    let (out, argmax) = maxpool2d_forward(&current, *pool_h, *pool_w)?;
                    pool_argmax[i] = Some(argmax);
                    out
                }
                Layer::Flatten => {
                    let batch = current.shape()[0];
                    let features = current.len() / batch;
                    current.reshape(vec![batch, features])?
                }
                Layer::Dense { weight, bias } => dense_forward(&current, weight, bias)?,
                Layer::Softmax => unreachable!("handled above"),
            };
        }
        inputs.push(current);
        Ok(ForwardCache { inputs, pool_argmax })
    }

    /// Logits of the cached pass.
    pub fn logits<'c>(&self, cache: &'c ForwardCache) -> &'c Tensor<f64> {
        cache.inputs.last().expect("cache holds at least the input")
    }

    /// Backpropagate a logits gradient through the stack; returns parameter
    /// gradients aligned with [`Model::params`].
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut param_grads_rev: Vec<Tensor<f64>> = Vec::new();
        let mut grad = grad_logits.clone();
        let upto = cache.inputs.len() - 1; // layers actually executed
        for i in (0..upto).rev() {
            let layer_input = &cache.inputs[i];
            grad = match &self.layers[i] {
                Layer::Conv2d { weight, .. } => {
                    let (gi, gw, gb) = conv2d_backward(layer_input, weight, &grad)?;
                    param_grads_rev.push(gb);
                    param_grads_rev.push(gw);
                    gi
                }
                Layer::Relu => relu_backward(layer_input, &grad)?,
                Layer::MaxPool2d { .. } => {
                    let argmax = cache.pool_argmax[i]
                        .as_ref()
                        .ok_or_else(|| Error::Shape(format!("layer {i}: missing pool cache")))?;
                    maxpool2d_backward(layer_input.shape(), argmax, &grad)?
                }
                Layer::Flatten => grad.reshape(layer_input.shape().to_vec())?,
                Layer::Dense { weight, .. } => {
                    let (gi, gw, gb) = dense_backward(layer_input, weight, &grad)?;
                    param_grads_rev.push(gb);
                    param_grads_rev.push(gw);
                    gi
                }
                Layer::Softmax => unreachable!("softmax is fused into the loss"),
            };
        }
        param_grads_rev.reverse();
        Ok(param_grads_rev)
    }
}

/// Run a layer stack at any precision, softmax head included.
pub fn forward_layers<T: Scalar>(layers: &[Layer<T>], input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut current = input.clone();
    for layer in layers {
        current = match layer {
            Layer::Conv2d { weight, bias } => conv2d_forward(&current, weight, bias)?,
            Layer::Relu => relu_forward(&current),
            Layer::MaxPool2d { pool_h, pool_w } => {
                maxpool2d_forward(&current, *pool_h, *pool_w)?.0
            }
            Layer::Flatten => {
                let batch = current.shape()[0];
                let features = current.len() / batch;
                current.reshape(vec![batch, features])?
            }
            Layer::Dense { weight, bias } => dense_forward(&current, weight, bias)?,
            Layer::Softmax => softmax(&current)?,
        };
    }
    Ok(current)
}

/// Class predictions at the stack's native precision. The softmax head is
/// skipped; argmax over logits is identical.
pub fn predict_layers<T: Scalar>(layers: &[Layer<T>], input: &Tensor<T>) -> Result<Vec<usize>> {
    let logits_stack: Vec<&Layer<T>> =
        layers.iter().filter(|l| !matches!(l, Layer::Softmax)).collect();
    let mut current = input.clone();
    for layer in logits_stack {
        current = match layer {
            Layer::Conv2d { weight, bias } => conv2d_forward(&current, weight, bias)?,
            Layer::Relu => relu_forward(&current),
            Layer::MaxPool2d { pool_h, pool_w } => {
                maxpool2d_forward(&current, *pool_h, *pool_w)?.0
            }
            Layer::Flatten => {
                let batch = current.shape()[0];
                let features = current.len() / batch;
                current.reshape(vec![batch, features])?
            }
            Layer::Dense { weight, bias } => dense_forward(&current, weight, bias)?,
            Layer::Softmax => unreachable!(),
        };
    }
    argmax_rows(&current)
}

// ── Tests ────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_shapes_work_across_the_supported_grid() {
        for l in 2..=6usize {
            for d in [16usize, 64, 128, 391] {
                for k in [4usize, 8, 40] {
                    let model = Model::build([2 * l, d, 1], k, &ArchConfig::default(), 1)
                        .unwrap_or_else(|e| panic!("L={l} d={d} K={k}: {e}"));
                    let chain = model.validate().unwrap();
                    assert_eq!(chain.last().unwrap(), &vec![1, k]);
                }
            }
        }
    }

    #[test]
    fn pool_shapes_adapt_to_the_antenna_axis() {
        // L=2: height 4 -> 3 after conv1; halving would starve conv2, so the
        // first pool must be time-axis only.
        let m2 = Model::build([4, 128, 1], 8, &ArchConfig::default(), 1).unwrap();
        match &m2.layers[2] {
            Layer::MaxPool2d { pool_h, pool_w } => assert_eq!((*pool_h, *pool_w), (1, 2)),
            other => panic!("unexpected layer {other:?}"),
        }
        match &m2.layers[5] {
            Layer::MaxPool2d { pool_h, pool_w } => assert_eq!((*pool_h, *pool_w), (2, 2)),
            other => panic!("unexpected layer {other:?}"),
        }
        // L=4: height 8 -> 7, halving leaves 3 which still feeds conv2.
        let m4 = Model::build([8, 128, 1], 8, &ArchConfig::default(), 1).unwrap();
        match &m4.layers[2] {
            Layer::MaxPool2d { pool_h, pool_w } => assert_eq!((*pool_h, *pool_w), (2, 2)),
            other => panic!("unexpected layer {other:?}"),
        }
    }

    #[test]
    fn corrupted_dense_width_fails_validation() {
        let mut model = Model::build([4, 32, 1], 4, &ArchConfig::default(), 1).unwrap();
        if let Layer::Dense { weight, .. } = &mut model.layers[7] {
            *weight = Tensor::zeros(vec![10, 128]);
        }
        assert!(matches!(model.validate(), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_weights_predict_the_bias_argmax() {
        let mut model = Model::build([4, 16, 1], 5, &ArchConfig::default(), 2).unwrap();
        for p in model.params_mut() {
            for v in p.as_mut_slice() {
                *v = 0.0;
            }
        }
        if let Layer::Dense { bias, .. } = &mut model.layers[9] {
            bias.as_mut_slice().copy_from_slice(&[0.1, 0.9, -0.3, 0.2, 0.0]);
        }
        let input = Tensor::zeros(vec![3, 4, 16, 1]);
        let preds = predict_layers(&model.layers, &input).unwrap();
        assert_eq!(preds, vec![1, 1, 1]);
    }

    #[test]
    fn batch_of_one_matches_batched_prediction() {
        let model = Model::build([8, 32, 1], 6, &ArchConfig::default(), 3).unwrap();
        let mut rng = crate::seed::stream_rng(5, Domain::EpochShuffle, 0);
        let batch = super::super::ops::tests::random_tensor(vec![4, 8, 32, 1], &mut rng);
        let batched = predict_layers(&model.layers, &batch).unwrap();
        for i in 0..4 {
            let single = batch.batch_rows(i, i + 1).unwrap();
            let one = predict_layers(&model.layers, &single).unwrap();
            assert_eq!(one[0], batched[i]);
        }
    }

    #[test]
    fn f32_forward_tracks_f64_forward() {
        let model = Model::build([4, 32, 1], 4, &ArchConfig::default(), 7).unwrap();
        let mut rng = crate::seed::stream_rng(6, Domain::EpochShuffle, 0);
        let input = super::super::ops::tests::random_tensor(vec![2, 4, 32, 1], &mut rng);
        let y64 = forward_layers(&model.layers, &input).unwrap();
        let layers32 = model.cast_layers::<f32>();
        let y32 = forward_layers(&layers32, &input.cast::<f32>()).unwrap();
        for (a, b) in y64.as_slice().iter().zip(y32.as_slice()) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn parameter_count_matches_hand_arithmetic() {
        // L=2, d=128, K=8 with the default architecture.
        let model = Model::build([4, 128, 1], 8, &ArchConfig::default(), 1).unwrap();
        let conv1 = 2 * 2 * 1 * 16 + 16;
        let conv2 = 2 * 2 * 16 * 32 + 32;
        let dense1 = (1 * 31 * 32) * 128 + 128;
        let dense2 = 128 * 8 + 8;
        assert_eq!(model.parameter_count(), conv1 + conv2 + dense1 + dense2);
    }
}
