//! AdamW with a cosine learning-rate schedule.

use alloc::vec::Vec;

use num_traits::Float;

use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};
use crate::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, weight_decay: 5e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates shaped like the parameters they follow.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(cfg: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(Tensor::zeros_like).collect();
        AdamW { cfg, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`:
    /// `p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps)`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(shape_err!("{} gradients for {} parameters", grads.len(), params.len()));
        }
        self.step += 1;
        let AdamWConfig { weight_decay, beta1, beta2, eps, .. } = self.cfg;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let shrink = T::from_f64(1.0 - lr * weight_decay);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let step_size = T::from_f64(lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        let eps = T::from_f64(eps);
        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            p.expect_same_shape(g)?;
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + one_b1 * gv;
                v[j] = b2 * v[j] + one_b2 * gv * gv;
                *pv = *pv * shrink - step_size * m[j] / (Float::sqrt(v[j] * inv_c2) + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `base` over `warmup` steps, then cosine decay to zero at `total`.
pub fn cosine_lr(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    0.5 * base * (1.0 + Float::cos(core::f64::consts::PI * progress))
}
