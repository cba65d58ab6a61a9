//! Helpers shared by the integration tests: seeded tensors, loop oracles and
//! one-layer harnesses around the tape.

#![allow(dead_code)]

use imamba_core::autodiff::{Tape, Var};
use imamba_core::nn::{ParamSpecs, ParamStore};
use imamba_core::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Real>(rng: &mut ChaCha8Rng, dims: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(dims, |_| T::from_f64(rng.random_range(-bound..=bound))).unwrap()
}

/// Direct 2-D convolution by nested loops over `[N, C, H, W]`.
/// `groups` is 1 (dense) or `C` (depthwise).
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    (c_out, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    depthwise: bool,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let c_per = if depthwise { 1 } else { c };
    let mut out = vec![0.0; n * c_out * oh * ow];
    for b in 0..n {
        for o in 0..c_out {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[o]);
                    for ci in 0..c_per {
                        let src_c = if depthwise { o } else { ci };
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (i * sh + u) as isize - ph as isize;
                                let xx = (j * sw + v) as isize - pw as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let xi = ((b * c + src_c) * h + y as usize) * w + xx as usize;
                                let wi = ((o * c_per + ci) * kh + u) * kw + v;
                                acc += x[xi] * weight[wi];
                            }
                        }
                    }
                    out[((b * c_out + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Selective scan of one channel from the definition:
/// `h = exp(delta a) h + delta B u`, `y = <C, h> + D u`.
pub fn selective_oracle(u: &[f64], delta: &[f64], a: &[f64], b: &[Vec<f64>], c: &[Vec<f64>], d: f64) -> Vec<f64> {
    let mut h = vec![0.0; a.len()];
    let mut y = Vec::with_capacity(u.len());
    for t in 0..u.len() {
        let mut acc = 0.0;
        for n in 0..a.len() {
            h[n] = (delta[t] * a[n]).exp() * h[n] + delta[t] * b[t][n] * u[t];
            acc += c[t][n] * h[n];
        }
        y.push(acc + d * u[t]);
    }
    y
}

/// Materialized parameters of a layer built into `specs`.
pub fn store<T: Real>(specs: &ParamSpecs, seed: u64) -> ParamStore<T> {
    ParamStore::materialize(specs, seed).unwrap()
}

/// Runs `f` on a fresh tape holding `params` and the input `x`.
pub fn run<T: Real>(
    params: &ParamStore<T>,
    x: &Tensor<T>,
    f: impl FnOnce(&mut Tape<T>, &[Var], Var) -> imamba_core::Result<Var>,
) -> Tensor<T> {
    let mut tape = Tape::new();
    let p = params.record(&mut tape);
    let xv = tape.leaf(x.clone());
    let y = f(&mut tape, &p, xv).unwrap();
    tape.value(y).clone()
}

/// `[N, C, W, H]` from `[N, C, H, W]`.
pub fn transpose_hw<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.transpose_hw().unwrap()
}
