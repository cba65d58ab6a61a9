//! Minibatch training of small models on the synthetic dataset.

pub mod data;
pub mod optim;

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::model::Model;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

pub use data::{generate_toy, ToyDataset};
pub use optim::{cosine_lr, AdamW, AdamWConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    pub warmup_steps: usize,
    /// Seed of the per-epoch shuffles.
    pub seed: u64,
    /// Ends training after the first epoch whose accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            optim: AdamWConfig::default(),
            warmup_steps: 20,
            seed: 0,
            stop_at_accuracy: None,
        }
    }
}

/// Mean loss and accuracy over one epoch of training steps. Both are
/// measured on each batch before its update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub steps: usize,
}

/// Loss, parameter gradients and logits of one labelled batch.
pub type BatchResult<T> = (T, Vec<Tensor<T>>, Tensor<T>);

pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.dims()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

fn count_correct(pred: &[usize], labels: &[usize]) -> usize {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count()
}

/// Trains with gradients from [`Model::loss_and_grads`].
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: &ToyDataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats, &Model<T>) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    train_with(model, data, cfg, |m, x, y| m.loss_and_grads(x, y), on_epoch)
}

/// Training loop with a caller-supplied gradient computation.
pub fn train_with<T: Real>(
    model: &mut Model<T>,
    data: &ToyDataset,
    cfg: &TrainConfig,
    mut grads: impl FnMut(&Model<T>, &Tensor<T>, &[usize]) -> Result<BatchResult<T>>,
    mut on_epoch: impl FnMut(&EpochStats, &Model<T>) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    let n = data.len();
    let bs = cfg.batch_size.clamp(1, n.max(1));
    let steps_per_epoch = n.div_ceil(bs);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(cfg.optim, &model.params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = data::sample_rng(cfg.seed, epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for idx in order.chunks(bs) {
            let (x, labels) = data.batch(idx)?;
            let (loss, g, logits) = grads(model, &x.cast(), &labels)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged(step));
            }
            loss_sum += loss * idx.len() as f64;
            correct += count_correct(&argmax_rows(&logits), &labels);
            let lr = cosine_lr(step, total_steps, cfg.warmup_steps, cfg.optim.lr);
            opt.step(&mut model.params, &g, lr)?;
            step += 1;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
            steps: step,
        };
        on_epoch(&stats, model)?;
        history.push(stats);
        if cfg.stop_at_accuracy.is_some_and(|target| stats.accuracy >= target) {
            break;
        }
    }
    Ok(history)
}

/// Mean loss and accuracy of `model` over `data`, without updates.
pub fn evaluate<T: Real>(model: &Model<T>, data: &ToyDataset, batch_size: usize) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut loss_sum, mut correct) = (0.0, 0);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk)?;
        let logits = model.forward(&x.cast())?;
        loss_sum += crate::ops::softmax_cross_entropy(&logits, &labels)?.as_f64() * chunk.len() as f64;
        correct += count_correct(&argmax_rows(&logits), &labels);
    }
    Ok((loss_sum / data.len() as f64, correct as f64 / data.len() as f64))
}
