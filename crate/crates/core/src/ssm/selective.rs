//! Selective (input-dependent) scan.
//!
//! Per channel `c` and step `t` along a traversal order:
//!
//! ```text
//! h_t = exp(delta_t A_c) ⊙ h_{t-1} + delta_t B_t u_t
//! y_t = <C_t, h_t> + D_c u_t
//! ```
//!
//! `B_t` and `C_t` are shared by all channels of a step; `delta_t` and `u_t`
//! are per channel. The input term uses the simplified `Bbar = delta B`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Ss2dConfig;
use crate::kernels::{self, gemm_nn};
use crate::tensor::{Real, Tensor};
use crate::{shape_err, Error, Result};

/// Extents of a batched scan over `sites` positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub channels: usize,
    pub state: usize,
    pub sites: usize,
}

impl ScanDims {
    /// Multiply–accumulates of one scan: exp, input, decay and readout per
    /// state entry, plus the skip term.
    pub fn macs(&self) -> u64 {
        (self.batch * self.sites * self.channels * (4 * self.state + 1)) as u64
    }
}

/// Borrowed scan operands in site layout.
///
/// `u`, `delta`: `[batch, channels, sites]`; `a`: `[channels, state]`;
/// `b`, `c`: `[batch, state, sites]`; `d`: `[channels]`.
#[derive(Clone, Copy)]
pub struct ScanInputs<'a, T> {
    pub u: &'a [T],
    pub delta: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d: &'a [T],
}

impl<T: Real> ScanInputs<'_, T> {
    fn check(&self, dims: &ScanDims, order: &[usize]) -> Result<()> {
        let ScanDims { batch, channels, state, sites } = *dims;
        let expect = [
            ("u", self.u.len(), batch * channels * sites),
            ("delta", self.delta.len(), batch * channels * sites),
            ("A", self.a.len(), channels * state),
            ("B", self.b.len(), batch * state * sites),
            ("C", self.c.len(), batch * state * sites),
            ("D", self.d.len(), channels),
            ("order", order.len(), sites),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(shape_err!("scan operand {name} has {got} elements, expected {want} for {dims:?}"));
            }
        }
        Ok(())
    }
}

/// Gathers `[state, sites]` into step-major `[steps, state]` following `order`.
fn gather_steps<T: Real>(src: &[T], state: usize, sites: usize, order: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); state * sites];
    for (t, &s) in order.iter().enumerate() {
        for n in 0..state {
            out[t * state + n] = src[n * sites + s];
        }
    }
    out
}

pub fn scan_forward<T: Real>(dims: &ScanDims, order: &[usize], inp: &ScanInputs<'_, T>) -> Result<Vec<T>> {
    inp.check(dims, order)?;
    let ScanDims { batch, channels, state, sites } = *dims;
    let mut y = vec![T::zero(); batch * channels * sites];
    let mut h = vec![T::zero(); state];
    for bi in 0..batch {
        let bt = gather_steps(&inp.b[bi * state * sites..][..state * sites], state, sites, order);
        let ct = gather_steps(&inp.c[bi * state * sites..][..state * sites], state, sites, order);
        for ch in 0..channels {
            let base = (bi * channels + ch) * sites;
            let a = &inp.a[ch * state..][..state];
            let dskip = inp.d[ch];
            h.fill(T::zero());
            for (t, &s) in order.iter().enumerate() {
                let dt = inp.delta[base + s];
                if !dt.is_finite() {
                    return Err(Error::Numeric { step: t, what: format!("timescale is {dt} in channel {ch}") });
                }
                let ut = inp.u[base + s];
                let du = dt * ut;
                let bs = &bt[t * state..][..state];
                let cs = &ct[t * state..][..state];
                let mut acc = T::zero();
                for n in 0..state {
                    h[n] = (dt * a[n]).exp() * h[n] + bs[n] * du;
                    acc += cs[n] * h[n];
                }
                y[base + s] = acc + dskip * ut;
            }
        }
    }
    Ok(y)
}

/// Gradients of every scan operand, laid out like [`ScanInputs`].
pub struct ScanGrads<T> {
    pub u: Vec<T>,
    pub delta: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d: Vec<T>,
}

/// Backward pass. The state trajectory is recomputed from the inputs
/// rather than kept from the forward pass.
pub fn scan_backward<T: Real>(
    dims: &ScanDims,
    order: &[usize],
    inp: &ScanInputs<'_, T>,
    gy: &[T],
) -> Result<ScanGrads<T>> {
    inp.check(dims, order)?;
    let ScanDims { batch, channels, state, sites } = *dims;
    let mut g = ScanGrads {
        u: vec![T::zero(); inp.u.len()],
        delta: vec![T::zero(); inp.delta.len()],
        a: vec![T::zero(); inp.a.len()],
        b: vec![T::zero(); inp.b.len()],
        c: vec![T::zero(); inp.c.len()],
        d: vec![T::zero(); inp.d.len()],
    };
    let mut hs = vec![T::zero(); sites * state];
    let mut decays = vec![T::zero(); sites * state];
    let mut gh = vec![T::zero(); state];
    for bi in 0..batch {
        let bt = gather_steps(&inp.b[bi * state * sites..][..state * sites], state, sites, order);
        let ct = gather_steps(&inp.c[bi * state * sites..][..state * sites], state, sites, order);
        let mut gbt = vec![T::zero(); state * sites];
        let mut gct = vec![T::zero(); state * sites];
        for ch in 0..channels {
            let base = (bi * channels + ch) * sites;
            let a = &inp.a[ch * state..][..state];
            let dskip = inp.d[ch];
            // recompute h_t and the decays for every step
            for (t, &s) in order.iter().enumerate() {
                let dt = inp.delta[base + s];
                let du = dt * inp.u[base + s];
                let bs = &bt[t * state..][..state];
                for n in 0..state {
                    let prev = if t == 0 { T::zero() } else { hs[(t - 1) * state + n] };
                    let decay = (dt * a[n]).exp();
                    decays[t * state + n] = decay;
                    hs[t * state + n] = decay * prev + bs[n] * du;
                }
            }
            gh.fill(T::zero());
            let mut gd = T::zero();
            for (t, &s) in order.iter().enumerate().rev() {
                let gyt = gy[base + s];
                let dt = inp.delta[base + s];
                let ut = inp.u[base + s];
                let bs = &bt[t * state..][..state];
                let cs = &ct[t * state..][..state];
                let mut gu = gyt * dskip;
                let mut gdt = T::zero();
                gd += gyt * ut;
                for n in 0..state {
                    let ht = hs[t * state + n];
                    let prev = if t == 0 { T::zero() } else { hs[(t - 1) * state + n] };
                    gct[t * state + n] += gyt * ht;
                    let ghn = gh[n] + gyt * cs[n];
                    let decay = decays[t * state + n];
                    // through decay = exp(dt a)
                    let g_decay = ghn * prev * decay;
                    gdt += g_decay * a[n];
                    g.a[ch * state + n] += g_decay * dt;
                    // through dt * B * u
                    gbt[t * state + n] += ghn * dt * ut;
                    gdt += ghn * bs[n] * ut;
                    gu += ghn * dt * bs[n];
                    gh[n] = ghn * decay;
                }
                g.u[base + s] += gu;
                g.delta[base + s] += gdt;
            }
            g.d[ch] += gd;
        }
        for (t, &s) in order.iter().enumerate() {
            for n in 0..state {
                g.b[(bi * state + n) * sites + s] += gbt[t * state + n];
                g.c[(bi * state + n) * sites + s] += gct[t * state + n];
            }
        }
    }
    Ok(g)
}

/// One direction's worth of selective-scan weights at width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveParams<T> {
    pub cfg: Ss2dConfig,
    /// `[dt_rank + 2N, d]`: rows produce `(dt_low, B, C)`.
    pub x_proj: Tensor<T>,
    /// `[d, dt_rank]`
    pub dt_proj: Tensor<T>,
    pub dt_bias: Vec<T>,
    /// `[d, N]`, the (negative) diagonal state matrices.
    pub a: Tensor<T>,
    pub d_skip: Vec<T>,
}

/// Standard real initialization of the diagonal state matrix: `-(1..=N)` per channel.
pub fn default_a<T: Real>(channels: usize, state: usize) -> Vec<T> {
    (0..channels * state).map(|i| -T::from_usize(i % state + 1)).collect()
}

impl<T: Real> SelectiveParams<T> {
    /// Generated `(delta [d, L], B [N, L], C [N, L])` for a `[L, d]` input.
    pub fn generate(&self, u: &Tensor<T>) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        let cfg = &self.cfg;
        let [len, d] = u.dims() else {
            return Err(shape_err!("selective scan input must be [L, d], got {}", u.shape()));
        };
        let (len, d) = (*len, *d);
        if d != cfg.channels {
            return Err(shape_err!("input {} has {d} channels, scan expects {}", u.shape(), cfg.channels));
        }
        let ut = transpose(u.data(), len, d);
        let rows = cfg.proj_rows();
        let mut proj = vec![T::zero(); rows * len];
        gemm_nn(rows, d, len, self.x_proj.data(), &ut, &mut proj);
        let r = cfg.dt_rank;
        let mut delta = vec![T::zero(); d * len];
        gemm_nn(d, r, len, self.dt_proj.data(), &proj[..r * len], &mut delta);
        for (ch, row) in delta.chunks_mut(len).enumerate() {
            row.iter_mut().for_each(|v| *v = kernels::softplus(*v + self.dt_bias[ch]));
        }
        let n = cfg.state_dim;
        let b = proj[r * len..(r + n) * len].to_vec();
        let c = proj[(r + n) * len..].to_vec();
        Ok((delta, b, c))
    }
}

fn transpose<T: Copy>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for j in 0..cols {
        out.extend((0..rows).map(|i| src[i * cols + j]));
    }
    out
}

/// Selective scan of a `[L, d]` sequence with `delta`, `B`, `C` generated
/// from the input by `params`. Returns `[L, d]`.
pub fn selective_scan<T: Real>(params: &SelectiveParams<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let (delta, b, c) = params.generate(u)?;
    let [len, d] = u.dims() else { unreachable!("checked by generate") };
    let (len, d) = (*len, *d);
    let dims = ScanDims { batch: 1, channels: d, state: params.cfg.state_dim, sites: len };
    let ut = transpose(u.data(), len, d);
    let order: Vec<usize> = (0..len).collect();
    let inputs = ScanInputs { u: &ut, delta: &delta, a: params.a.data(), b: &b, c: &c, d: &params.d_skip };
    let y = scan_forward(&dims, &order, &inputs)?;
    Tensor::new(&[len, d], transpose(&y, d, len))
}
