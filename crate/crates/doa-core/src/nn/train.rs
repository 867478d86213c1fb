//! Training: bias-corrected Adam, seeded epoch shuffles, best-validation
//! checkpointing, and accuracy evaluation.
//!
//! Gradient accumulation walks the batch in index order, so training is
//! bit-reproducible for a fixed seed regardless of thread count.

use crate::dataset::{LabeledDataset, RealTensorBatch, Split};
use crate::error::{Error, Result};
use crate::nn::model::{predict_layers, Model};
use crate::nn::ops::softmax_cross_entropy;
use crate::nn::tensor::Tensor;
use crate::seed::{stream_rng, Domain};
use rand::seq::SliceRandom;

/// Training loss above this value is reported as divergence.
pub const DIVERGENCE_LOSS_CAP: f64 = 1e12;

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Standardize inputs to zero mean / unit variance of the train split.
    /// Off by default; the raw real/imag values train fine.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            standardize: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::argument("learning rate must be > 0".to_string()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::argument("beta1/beta2 must lie in [0, 1)".to_string()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::argument("batch_size and epochs must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// First/second moment estimates per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn for_model(model: &Model) -> AdamState {
        let zeros: Vec<Tensor<f64>> =
            model.params().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update over all parameter tensors.
pub fn adam_step(
    params: &mut [&mut Tensor<f64>],
    grads: &[Tensor<f64>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::argument(format!(
            "adam: {} params, {} grads, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((param, grad), (m, v)) in
        params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if param.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "adam: grad shape {:?} != param shape {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let p = param.as_mut_slice();
        let g = grad.as_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for i in 0..p.len() {
            ms[i] = cfg.beta1 * ms[i] + (1.0 - cfg.beta1) * g[i];
            vs[i] = cfg.beta2 * vs[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = ms[i] / bc1;
            let v_hat = vs[i] / bc2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Per-epoch log line.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Result of a training run: the best-validation checkpoint and the log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    /// (mean, std) applied to inputs when standardization was requested.
    pub standardization: Option<(f64, f64)>,
}

/// Train on a dataset's train split, validating per epoch on the val split.
pub fn train(model: Model, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let train_batch = ds.tensor_for_split(Split::Train)?;
    let val_batch = ds.tensor_for_split(Split::Val)?;
    train_on_tensors(model, &train_batch, Some(&val_batch), cfg)
}

/// Train on explicit tensor batches. Without a validation batch the final
/// model is returned and `val_accuracy` reports training accuracy.
pub fn train_on_tensors(
    mut model: Model,
    train_batch: &RealTensorBatch,
    val_batch: Option<&RealTensorBatch>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    let n_train = train_batch.batch_size();
    if n_train == 0 {
        return Err(Error::argument("empty training batch".to_string()));
    }

    let mut train_x = train_batch.data.clone();
    let mut val_x = val_batch.map(|b| b.data.clone());
    let mut standardization = None;
    if cfg.standardize {
        let data = train_x.as_slice();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / data.len() as f64;
        let std = var.sqrt().max(1e-12);
        for v in train_x.as_mut_slice() {
            *v = (*v - mean) / std;
        }
        if let Some(vx) = &mut val_x {
            for v in vx.as_mut_slice() {
                *v = (*v - mean) / std;
            }
        }
        standardization = Some((mean, std));
    }

    let mut state = AdamState::for_model(&model);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Model)> = None;

    let mut indices: Vec<usize> = (0..n_train).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, Domain::EpochShuffle, epoch as u64);
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            let x = train_x.gather_rows(chunk)?;
            let labels: Vec<u16> = chunk.iter().map(|&i| train_batch.labels[i]).collect();
            let cache = model.forward_cached(&x)?;
            let (loss, grad_logits) = softmax_cross_entropy(model.logits(&cache), &labels)?;
            // A cross-entropy loss anywhere near this cap means the logits
            // have left the representable training regime; with a stable
            // softmax the loss often stays finite while exploding, so a
            // finiteness test alone misses real divergence.
            if !loss.is_finite() || loss > DIVERGENCE_LOSS_CAP {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            let grads = model.backward(&cache, &grad_logits)?;
            let mut params = model.params_mut();
            adam_step(&mut params, &grads, &mut state, cfg)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / n_train as f64;

        let val_accuracy = match (&val_x, val_batch) {
            (Some(vx), Some(vb)) => accuracy_on(&model, vx, &vb.labels)?,
            _ => accuracy_on(&model, &train_x, &train_batch.labels)?,
        };
        metrics.push(EpochMetrics { epoch, train_loss, val_accuracy });
        if best.as_ref().map_or(true, |(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, model.clone()));
        }
    }

    let model = best.map(|(_, m)| m).expect("epochs >= 1 guarantees a checkpoint");
    Ok(TrainOutcome { model, metrics, standardization })
}

/// Class predictions for a 64-bit input batch.
pub fn predict(model: &Model, batch: &Tensor<f64>) -> Result<Vec<usize>> {
    predict_layers(&model.layers, batch)
}

fn accuracy_on(model: &Model, data: &Tensor<f64>, labels: &[u16]) -> Result<f64> {
    // Chunked evaluation keeps activation memory bounded.
    let n = data.shape()[0];
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + 256).min(n);
        let preds = predict_layers(&model.layers, &data.batch_rows(start, end)?)?;
        correct += preds
            .iter()
            .zip(&labels[start..end])
            .filter(|(p, l)| **p == **l as usize)
            .count();
        start = end;
    }
    Ok(correct as f64 / n as f64)
}

/// Fraction of a tensor batch the model classifies correctly (64-bit path).
pub fn evaluate_accuracy(model: &Model, batch: &RealTensorBatch) -> Result<f64> {
    accuracy_on(model, &batch.data, &batch.labels)
}

/// Same at 32-bit: weights and activations are cast to f32.
pub fn evaluate_accuracy_f32(model: &Model, batch: &RealTensorBatch) -> Result<f64> {
    let layers32 = model.cast_layers::<f32>();
    let data32 = batch.data.cast::<f32>();
    let n = batch.batch_size();
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + 256).min(n);
        let stride: usize = data32.shape()[1..].iter().product();
        let slice = Tensor::new(
            {
                let mut s = data32.shape().to_vec();
                s[0] = end - start;
                s
            },
            data32.as_slice()[start * stride..end * stride].to_vec(),
        )?;
        let preds = predict_layers(&layers32, &slice)?;
        correct += preds
            .iter()
            .zip(&batch.labels[start..end])
            .filter(|(p, l)| **p == **l as usize)
            .count();
        start = end;
    }
    Ok(correct as f64 / n as f64)
}

// ── Tests ────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ArchConfig;

    fn one_param(value: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![value]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = one_param(0.7);
        let g = one_param(0.0);
        let mut state = AdamState { m: vec![one_param(0.0)], v: vec![one_param(0.0)], step: 0 };
        adam_step(&mut [&mut p], &[g], &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(p.as_slice()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        // Bias correction cancels at t=1, so the update is lr*g/(|g|+eps).
        let cfg = TrainConfig::default();
        for g0 in [0.3, -2.0, 1e-3] {
            let mut p = one_param(1.0);
            let mut state = AdamState { m: vec![one_param(0.0)], v: vec![one_param(0.0)], step: 0 };
            adam_step(&mut [&mut p], &[one_param(g0)], &mut state, &cfg).unwrap();
            let delta = p.as_slice()[0] - 1.0;
            let expected = -cfg.learning_rate * g0 / (g0.abs() + cfg.epsilon);
            assert!((delta - expected).abs() < 1e-15, "g0={g0}: delta {delta} vs {expected}");
            assert!((delta.abs() - cfg.learning_rate).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(x) = x^2, gradient 2x, from x = 1.
        let cfg = TrainConfig { learning_rate: 0.05, ..TrainConfig::default() };
        let mut p = one_param(1.0);
        let mut state = AdamState { m: vec![one_param(0.0)], v: vec![one_param(0.0)], step: 0 };
        let mut history = vec![1.0f64];
        for _ in 0..100 {
            let g = one_param(2.0 * p.as_slice()[0]);
            adam_step(&mut [&mut p], &[g], &mut state, &cfg).unwrap();
            history.push(p.as_slice()[0]);
        }
        for w in history[3..].windows(2) {
            assert!(w[1].abs() < w[0].abs(), "|x| not decreasing: {} -> {}", w[0], w[1]);
        }
        assert!(history.last().unwrap().abs() < 0.2);
    }

    fn toy_batch(k: usize, per_class: usize, d: usize, seed: u64) -> RealTensorBatch {
        use crate::dataset::to_real_tensor;
        use crate::signal::{synthesize_observation, ArrayGeometry, SourceSpec, WidebandGrid};
        let geometry = ArrayGeometry::half_wavelength(2, 1.0e9).unwrap();
        let grid = WidebandGrid::seeded(2, 14, 20.0e6, 1, seed).unwrap();
        let center = grid.band_center_hz(&geometry, 1);
        let mut obs = Vec::new();
        for class in 0..k {
            let angle = -90.0 + 180.0 * class as f64 / k as f64;
            for i in 0..per_class {
                let mut o = synthesize_observation(
                    &[SourceSpec::qpsk(center, angle, 1)],
                    &grid,
                    &geometry,
                    d,
                    seed + (class * per_class + i) as u64,
                )
                .unwrap();
                o.true_label = Some(class as u16);
                obs.push(o);
            }
        }
        let refs: Vec<&crate::signal::Observation> = obs.iter().collect();
        to_real_tensor(&refs).unwrap()
    }

    #[test]
    fn training_is_bit_reproducible() {
        let batch = toy_batch(4, 4, 32, 3);
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 9, ..TrainConfig::default() };
        let run = || {
            let model = Model::build([4, 32, 1], 4, &ArchConfig::default(), 11).unwrap();
            train_on_tensors(model, &batch, None, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn absurd_learning_rate_diverges_with_a_named_epoch() {
        let batch = toy_batch(4, 4, 32, 5);
        let cfg = TrainConfig {
            learning_rate: 1e9,
            epochs: 10,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let model = Model::build([4, 32, 1], 4, &ArchConfig::default(), 1).unwrap();
        match train_on_tensors(model, &batch, None, &cfg) {
            Err(Error::TrainingDiverged { epoch, .. }) => assert!(epoch < 10),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.metrics)),
        }
    }

    #[test]
    fn standardization_is_recorded_when_requested() {
        let batch = toy_batch(2, 6, 32, 7);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            standardize: true,
            ..TrainConfig::default()
        };
        let model = Model::build([4, 32, 1], 2, &ArchConfig::default(), 1).unwrap();
        let out = train_on_tensors(model, &batch, None, &cfg).unwrap();
        let (mean, std) = out.standardization.unwrap();
        assert!(mean.is_finite() && std > 0.0);
    }
}
