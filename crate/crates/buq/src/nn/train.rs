//! Mini-batch SGD with momentum on cross-entropy plus an L2 penalty.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::net::{cross_entropy, ActShape, Cache, DropoutPass, Net};
use crate::nn::{Architecture, DropoutMode, ModelParams};

/// Epoch shuffles come from this fixed stream (xor'd with the epoch index),
/// not from the training seed, so every ensemble member sees the same data
/// order and only the initialization varies between members.
const DATA_ORDER_SEED: u64 = 0xDA7A_081D_EB15_EED5;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// L2 coefficient: the objective is `cross-entropy + l2 * ||theta||^2`.
    pub l2: f32,
    /// Dropout probability handed to the architecture builders.
    pub dropout_p: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            l2: 1e-4,
            dropout_p: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.l2 < 0.0 {
            return Err(Error::Config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

fn gather_batch(data: &LabeledDataset, indices: &[usize], buf: &mut Vec<f32>, labels: &mut Vec<usize>) {
    buf.clear();
    labels.clear();
    for &i in indices {
        buf.extend_from_slice(data.image(i));
        labels.push(data.labels()[i] as usize);
    }
}

/// Trains a fresh model on `data`.
///
/// Initialization and train-time dropout masks are driven by `cfg.seed`;
/// the per-epoch shuffle comes from a fixed stream shared by all seeds.
/// With `cfg.epochs == 0` the returned parameters equal the initialization.
///
/// Fails with [`Error::TrainingDiverged`] as soon as a batch loss becomes
/// non-finite.
pub fn train(arch: &Architecture, data: &LabeledDataset, cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if data.len() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let classes = class_count(arch);
    if let Some(&bad) = data.labels().iter().find(|&&l| (l as usize) >= classes) {
        return Err(Error::Config(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ModelParams::init_with_rng(arch, cfg.seed, &mut rng);
    let shape = ActShape::Spatial {
        c: 1,
        h: data.height(),
        w: data.width(),
    };

    let mut velocity: Vec<(Vec<f32>, Vec<f32>)> = model
        .wb()
        .iter()
        .map(|wb| (vec![0.0; wb.w.len()], vec![0.0; wb.b.len()]))
        .collect();

    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut batch_buf: Vec<f32> = Vec::new();
    let mut batch_labels: Vec<usize> = Vec::new();
    let two_l2 = 2.0 * cfg.l2;

    for epoch in 0..cfg.epochs {
        let mut order_rng = ChaCha8Rng::seed_from_u64(DATA_ORDER_SEED ^ epoch as u64);
        indices.shuffle(&mut order_rng);
        for chunk in indices.chunks(cfg.batch_size) {
            gather_batch(data, chunk, &mut batch_buf, &mut batch_labels);
            let batch = chunk.len();
            let net = Net {
                layers: model.layers(),
                wb: model.wb(),
            };
            let mut caches: Vec<Cache<f32>> = Vec::with_capacity(model.layers().len());
            let (logits, out_shape) = net.forward_logits(
                &batch_buf,
                batch,
                shape,
                DropoutPass::PerElement(&mut rng),
                Some(&mut caches),
            )?;
            let (loss, dlogits) = cross_entropy(&logits, &batch_labels, batch, out_shape.numel());
            if !loss.is_finite() || !logits.iter().all(|v| v.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            let grads = net.backward(&caches, dlogits, batch);
            let lr = cfg.learning_rate;
            let mu = cfg.momentum;
            for ((wb, grad), vel) in model.wb_mut().iter_mut().zip(&grads).zip(&mut velocity) {
                for ((w, &g), v) in wb.w.iter_mut().zip(&grad.w).zip(&mut vel.0) {
                    *v = mu * *v - lr * (g + two_l2 * *w);
                    *w += *v;
                }
                for ((b, &g), v) in wb.b.iter_mut().zip(&grad.b).zip(&mut vel.1) {
                    *v = mu * *v - lr * (g + two_l2 * *b);
                    *b += *v;
                }
            }
        }
    }
    Ok(model)
}

fn class_count(arch: &Architecture) -> usize {
    use crate::nn::LayerSpec;
    for layer in arch.layers.iter().rev() {
        match *layer {
            LayerSpec::Dense { output, .. } => return output,
            LayerSpec::Conv2d { out_channels, .. } => return out_channels,
            _ => {}
        }
    }
    0
}

/// Mean cross-entropy plus the L2 penalty over a dataset, dropout off.
pub fn dataset_loss(model: &ModelParams, data: &LabeledDataset, l2: f32) -> Result<f64> {
    let mut ce = 0.0f64;
    let shape = [1, data.height(), data.width()];
    for start in (0..data.len()).step_by(256) {
        let end = (start + 256).min(data.len());
        let batch = end - start;
        let slice = data.image_block(start, end);
        let probs = model.forward_probs_batch(slice, batch, &shape, DropoutMode::Off)?;
        let m = probs.len() / batch;
        for (bi, &label) in data.labels()[start..end].iter().enumerate() {
            let p = probs[bi * m + label as usize] as f64;
            ce -= p.max(1e-45).ln();
        }
    }
    Ok(ce / data.len() as f64 + l2 as f64 * model.l2_norm_sq())
}

/// Fraction of samples whose argmax probability matches the label,
/// dropout off.
pub fn dataset_accuracy(model: &ModelParams, data: &LabeledDataset) -> Result<f64> {
    let mut correct = 0usize;
    let shape = [1, data.height(), data.width()];
    for start in (0..data.len()).step_by(256) {
        let end = (start + 256).min(data.len());
        let batch = end - start;
        let slice = data.image_block(start, end);
        let probs = model.forward_probs_batch(slice, batch, &shape, DropoutMode::Off)?;
        let m = probs.len() / batch;
        for (bi, &label) in data.labels()[start..end].iter().enumerate() {
            let row = &probs[bi * m..(bi + 1) * m];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            if best == label as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
