//! Batch-parallel gradients.
//!
//! A batch is cut into contiguous shards, one per thread; shard losses and
//! gradients are combined with weights proportional to shard size, in shard
//! order. The result only depends on the thread count, not on scheduling.

use std::thread;

use imamba_core::model::Model;
use imamba_core::train::BatchResult;
use imamba_core::{Real, Tensor};

use crate::Result;

pub const THREADS_VAR: &str = "IM_THREADS";

/// Thread cap from `IM_THREADS`; 1 when unset or unparsable.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_VAR).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

/// Sizes of `shards` contiguous, nearly equal pieces of `n` items.
pub fn shard_sizes(n: usize, shards: usize) -> Vec<usize> {
    let k = shards.clamp(1, n.max(1));
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Mean loss, gradients and logits of a batch, computed on up to `threads` threads.
pub fn loss_and_grads<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    threads: usize,
) -> imamba_core::Result<BatchResult<T>> {
    let (n, c, h, w) = x.nchw()?;
    let sizes = shard_sizes(n, threads);
    if sizes.len() == 1 {
        return model.loss_and_grads(x, labels);
    }
    let per = c * h * w;
    let mut shards = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in &sizes {
        let xs = Tensor::new(&[s, c, h, w], x.data()[start * per..(start + s) * per].to_vec())?;
        shards.push((xs, &labels[start..start + s]));
        start += s;
    }
    let results: Vec<imamba_core::Result<BatchResult<T>>> = thread::scope(|scope| {
        let handles: Vec<_> = shards.iter().map(|(xs, ls)| scope.spawn(move || model.loss_and_grads(xs, ls))).collect();
        handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
    });

    let mut loss = T::zero();
    let mut grads: Option<Vec<Tensor<T>>> = None;
    let mut logits = Vec::with_capacity(n * model.config.num_classes);
    for (res, &s) in results.into_iter().zip(&sizes) {
        let (l, g, lg) = res?;
        let weight = T::from_f64(s as f64 / n as f64);
        loss += l * weight;
        match &mut grads {
            None => grads = Some(g.iter().map(|t| t.scale(weight)).collect()),
            Some(acc) => {
                for (a, t) in acc.iter_mut().zip(&g) {
                    a.add_assign(&t.scale(weight))?;
                }
            }
        }
        logits.extend_from_slice(lg.data());
    }
    let logits = Tensor::new(&[n, model.config.num_classes], logits)?;
    Ok((loss, grads.expect("at least two shards"), logits))
}

/// Training with [`loss_and_grads`] on `threads` threads.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: &imamba_core::train::ToyDataset,
    cfg: &imamba_core::train::TrainConfig,
    threads: usize,
    on_epoch: impl FnMut(&imamba_core::train::EpochStats, &Model<T>) -> imamba_core::Result<()>,
) -> Result<Vec<imamba_core::train::EpochStats>> {
    Ok(imamba_core::train::train_with(model, data, cfg, |m, x, y| loss_and_grads(m, x, y, threads), on_epoch)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use imamba_core::config::ModelConfig;

    #[test]
    fn shards_cover_the_batch() {
        assert_eq!(shard_sizes(10, 3), [4, 3, 3]);
        assert_eq!(shard_sizes(2, 8), [1, 1]);
        assert_eq!(shard_sizes(5, 1), [5]);
    }

    #[test]
    fn sharded_gradients_match_single_pass() {
        let model = Model::<f64>::new(ModelConfig::toy(4), 3).unwrap();
        let data = imamba_core::train::generate_toy(1, 5).unwrap();
        let (x, labels) = data.batch(&[0, 1, 2, 3, 4]).unwrap();
        let x = x.cast::<f64>();
        let (l1, g1, o1) = model.loss_and_grads(&x, &labels).unwrap();
        let (l3, g3, o3) = loss_and_grads(&model, &x, &labels, 3).unwrap();
        assert!((l1 - l3).abs() < 1e-12);
        assert!(o1.max_abs_diff(&o3).unwrap() < 1e-12);
        for (a, b) in g1.iter().zip(&g3) {
            assert!(a.max_abs_diff(b).unwrap() < 1e-10);
        }
    }
}
