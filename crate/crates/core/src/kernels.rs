//! Slice-level numeric kernels shared by the tensor operations and the tape.
//!
//! Every loop reduces in a fixed order, so results are bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Real;
use crate::{config_err, Result};

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` where `a` is stored as `[k×m]`.
pub fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a · bᵀ` where `b` is stored as `[n×k]`.
pub fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with eight interleaved partial sums, combined in a fixed order.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ar.iter().zip(br) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Geometry of a 2-D convolution over an `[N, C, H, W]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub depthwise: bool,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv_out_extent(input: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        batch: usize,
        c_in: usize,
        (h, w): (usize, usize),
        c_out: usize,
        (kh, kw): (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        depthwise: bool,
    ) -> Result<Self> {
        if depthwise && c_in != c_out {
            return Err(config_err!("depthwise convolution needs c_in == c_out, got {c_in} and {c_out}"));
        }
        let oh = conv_out_extent(h, kh, pad.0, stride.0);
        let ow = conv_out_extent(w, kw, pad.1, stride.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(ConvGeom {
                batch,
                c_in,
                h,
                w,
                c_out,
                kh,
                kw,
                stride,
                pad,
                depthwise,
                oh,
                ow,
            }),
            _ => Err(config_err!(
                "kernel {kh}x{kw} with stride {stride:?} and padding {pad:?} leaves no output for input {h}x{w}"
            )),
        }
    }

    /// Input channels seen by each output channel.
    pub fn fan_in(&self) -> usize {
        let per_group = if self.depthwise { 1 } else { self.c_in };
        per_group * self.kh * self.kw
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.fan_in()
    }

    pub fn macs(&self) -> u64 {
        (self.batch * self.oh * self.ow * self.c_out * self.fan_in()) as u64
    }

    fn is_pointwise(&self) -> bool {
        !self.depthwise
            && self.kh == 1
            && self.kw == 1
            && self.stride == (1, 1)
            && self.pad == (0, 0)
    }

    /// Output columns `ox` for which `ox * sw + kx - pw` lands inside `[0, w)`.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        valid_range(self.w, self.ow, kx, self.pad.1, self.stride.1)
    }

    #[inline]
    fn valid_rows(&self, ky: usize) -> (usize, usize) {
        valid_range(self.h, self.oh, ky, self.pad.0, self.stride.0)
    }
}

#[inline]
fn valid_range(extent: usize, out: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // largest o with o * stride + k - pad <= extent - 1
    let hi = if extent + pad > k { ((extent - 1 + pad - k) / stride + 1).min(out) } else { 0 };
    let lo = lo.min(out);
    (lo, hi.max(lo))
}

/// Direct convolution. The reference implementation: one accumulation per
/// kernel tap, no data rearrangement.
pub fn conv_direct<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.c_out * g.oh * g.ow];
    let fan = g.fan_in();
    for n in 0..g.batch {
        for co in 0..g.c_out {
            let b = bias.map_or(T::zero(), |b| b[co]);
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = b;
                    let groups_in: core::ops::Range<usize> =
                        if g.depthwise { co..co + 1 } else { 0..g.c_in };
                    for (ci_local, ci) in groups_in.enumerate() {
                        for ky in 0..g.kh {
                            let iy = (oy * g.stride.0 + ky) as isize - g.pad.0 as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let ix = (ox * g.stride.1 + kx) as isize - g.pad.1 as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((n * g.c_in + ci) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = w[co * fan + (ci_local * g.kh + ky) * g.kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((n * g.c_out + co) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Convolution forward: depthwise planes are convolved in place, dense
/// kernels go through im2col and a matrix product.
pub fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let osz = g.oh * g.ow;
    let mut out = vec![T::zero(); g.batch * g.c_out * osz];
    if g.depthwise {
        for n in 0..g.batch {
            for c in 0..g.c_in {
                let xp = &x[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                let wp = &w[c * g.kh * g.kw..][..g.kh * g.kw];
                let op = &mut out[(n * g.c_out + c) * osz..][..osz];
                depthwise_plane_forward(g, xp, wp, op);
            }
        }
    } else {
        // one product over the whole batch: [c_out, k] x [k, batch * osz]
        let ns = g.batch * osz;
        let cols = lower(g, x);
        let mut prod = vec![T::zero(); g.c_out * ns];
        gemm_nn(g.c_out, g.fan_in(), ns, w, &cols, &mut prod);
        scatter_channel_major(&prod, g.batch, g.c_out, osz, &mut out);
    }
    if let Some(b) = bias {
        for n in 0..g.batch {
            for (co, &bv) in b.iter().enumerate() {
                for v in &mut out[(n * g.c_out + co) * osz..][..osz] {
                    *v += bv;
                }
            }
        }
    }
    out
}

fn depthwise_plane_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let (sh, sw) = g.stride;
    for ky in 0..g.kh {
        let (oy0, oy1) = g.valid_rows(ky);
        for oy in oy0..oy1 {
            let iy = oy * sh + ky - g.pad.0;
            let xrow = &x[iy * g.w..(iy + 1) * g.w];
            let orow = &mut out[oy * g.ow..(oy + 1) * g.ow];
            for kx in 0..g.kw {
                let wv = w[ky * g.kw + kx];
                let (ox0, ox1) = g.valid_cols(kx);
                if ox0 == ox1 {
                    continue;
                }
                if sw == 1 {
                    let ix0 = ox0 + kx - g.pad.1;
                    for (o, &xv) in orow[ox0..ox1].iter_mut().zip(&xrow[ix0..]) {
                        *o += wv * xv;
                    }
                } else {
                    for ox in ox0..ox1 {
                        orow[ox] += wv * xrow[ox * sw + kx - g.pad.1];
                    }
                }
            }
        }
    }
}

/// `[N, C, S]` to `[C, N * S]`.
fn gather_channel_major<T: Real>(src: &[T], batch: usize, c: usize, s: usize) -> Vec<T> {
    if batch == 1 {
        return src.to_vec();
    }
    let mut out = vec![T::zero(); src.len()];
    for n in 0..batch {
        for ci in 0..c {
            out[(ci * batch + n) * s..][..s].copy_from_slice(&src[(n * c + ci) * s..][..s]);
        }
    }
    out
}

/// Adds `[C, N * S]` into `[N, C, S]`.
fn scatter_channel_major<T: Real>(src: &[T], batch: usize, c: usize, s: usize, dst: &mut [T]) {
    for n in 0..batch {
        for ci in 0..c {
            let d = &mut dst[(n * c + ci) * s..][..s];
            for (o, &v) in d.iter_mut().zip(&src[(ci * batch + n) * s..][..s]) {
                *o += v;
            }
        }
    }
}

/// Input patches of the whole batch as a `[fan_in, N * out_sites]` matrix.
fn lower<T: Real>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    if g.is_pointwise() {
        return gather_channel_major(x, g.batch, g.c_in, g.h * g.w);
    }
    let osz = g.oh * g.ow;
    let ns = g.batch * osz;
    let mut cols = vec![T::zero(); g.fan_in() * ns];
    let plane = g.c_in * g.h * g.w;
    for (n, xn) in x.chunks_exact(plane).enumerate() {
        im2col(g, xn, &mut cols, ns, n * osz);
    }
    cols
}

/// Writes the patches of one image into columns `offset..offset + out_sites`
/// of a row-major matrix with row length `ld`.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T], ld: usize, offset: usize) {
    let osz = g.oh * g.ow;
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut cols[((ci * g.kh + ky) * g.kw + kx) * ld + offset..][..osz];
                row.fill(T::zero());
                let (oy0, oy1) = g.valid_rows(ky);
                let (ox0, ox1) = g.valid_cols(kx);
                for oy in oy0..oy1 {
                    let iy = oy * g.stride.0 + ky - g.pad.0;
                    let xrow = &x[(ci * g.h + iy) * g.w..][..g.w];
                    for ox in ox0..ox1 {
                        row[oy * g.ow + ox] = xrow[ox * g.stride.1 + kx - g.pad.1];
                    }
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: accumulates patch gradients back onto one image.
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], ld: usize, offset: usize, gx: &mut [T]) {
    let osz = g.oh * g.ow;
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &cols[((ci * g.kh + ky) * g.kw + kx) * ld + offset..][..osz];
                let (oy0, oy1) = g.valid_rows(ky);
                let (ox0, ox1) = g.valid_cols(kx);
                for oy in oy0..oy1 {
                    let iy = oy * g.stride.0 + ky - g.pad.0;
                    let grow = &mut gx[(ci * g.h + iy) * g.w..][..g.w];
                    for ox in ox0..ox1 {
                        grow[ox * g.stride.1 + kx - g.pad.1] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// Gradient of the convolution with respect to its input.
pub fn conv_backward_input<T: Real>(g: &ConvGeom, gy: &[T], w: &[T]) -> Vec<T> {
    let osz = g.oh * g.ow;
    let mut gx = vec![T::zero(); g.batch * g.c_in * g.h * g.w];
    if g.depthwise {
        for n in 0..g.batch {
            for c in 0..g.c_in {
                let gyp = &gy[(n * g.c_out + c) * osz..][..osz];
                let wp = &w[c * g.kh * g.kw..][..g.kh * g.kw];
                let gxp = &mut gx[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid_rows(ky);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride.0 + ky - g.pad.0;
                        for kx in 0..g.kw {
                            let wv = wp[ky * g.kw + kx];
                            let (ox0, ox1) = g.valid_cols(kx);
                            for ox in ox0..ox1 {
                                gxp[iy * g.w + ox * g.stride.1 + kx - g.pad.1] += wv * gyp[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    } else {
        let ns = g.batch * osz;
        let k = g.fan_in();
        let gyc = gather_channel_major(gy, g.batch, g.c_out, osz);
        let mut dcols = vec![T::zero(); k * ns];
        gemm_tn(k, g.c_out, ns, w, &gyc, &mut dcols);
        if g.is_pointwise() {
            scatter_channel_major(&dcols, g.batch, g.c_in, osz, &mut gx);
        } else {
            let plane = g.c_in * g.h * g.w;
            for (n, gxn) in gx.chunks_exact_mut(plane).enumerate() {
                col2im(g, &dcols, ns, n * osz, gxn);
            }
        }
    }
    gx
}

/// Gradient of the convolution with respect to its weights, and the bias gradient.
pub fn conv_backward_params<T: Real>(g: &ConvGeom, gy: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
    let osz = g.oh * g.ow;
    let mut gw = vec![T::zero(); g.weight_len()];
    let mut gb = vec![T::zero(); g.c_out];
    for n in 0..g.batch {
        for (co, b) in gb.iter_mut().enumerate() {
            *b += gy[(n * g.c_out + co) * osz..][..osz].iter().copied().sum::<T>();
        }
    }
    if g.depthwise {
        for n in 0..g.batch {
            for c in 0..g.c_in {
                let gyp = &gy[(n * g.c_out + c) * osz..][..osz];
                let xp = &x[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid_rows(ky);
                    for kx in 0..g.kw {
                        let (ox0, ox1) = g.valid_cols(kx);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride.0 + ky - g.pad.0;
                            for ox in ox0..ox1 {
                                acc += gyp[oy * g.ow + ox] * xp[iy * g.w + ox * g.stride.1 + kx - g.pad.1];
                            }
                        }
                        gw[(c * g.kh + ky) * g.kw + kx] += acc;
                    }
                }
            }
        }
    } else {
        let ns = g.batch * osz;
        let gyc = gather_channel_major(gy, g.batch, g.c_out, osz);
        let cols = lower(g, x);
        gemm_nt(g.c_out, ns, g.fan_in(), &gyc, &cols, &mut gw);
    }
    (gw, gb)
}

/// Per-site normalization statistics.
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Normalizes across channels at each `(n, site)`; `x` is `[N, C, S]`.
pub fn layer_norm_forward<T: Real>(
    (n, c, s): (usize, usize, usize),
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, NormStats<T>) {
    let mut mean = vec![T::zero(); n * s];
    let mut rstd = vec![T::zero(); n * s];
    let mut y = vec![T::zero(); x.len()];
    let inv_c = T::one() / T::from_usize(c);
    for b in 0..n {
        let xb = &x[b * c * s..][..c * s];
        let m = &mut mean[b * s..][..s];
        for ch in 0..c {
            for (mv, &xv) in m.iter_mut().zip(&xb[ch * s..][..s]) {
                *mv += xv;
            }
        }
        m.iter_mut().for_each(|v| *v *= inv_c);
        let r = &mut rstd[b * s..][..s];
        for ch in 0..c {
            for ((rv, &xv), &mv) in r.iter_mut().zip(&xb[ch * s..][..s]).zip(m.iter()) {
                let d = xv - mv;
                *rv += d * d;
            }
        }
        r.iter_mut().for_each(|v| *v = T::one() / (*v * inv_c + eps).sqrt());
        let yb = &mut y[b * c * s..][..c * s];
        for ch in 0..c {
            let (gv, bv) = (gamma[ch], beta[ch]);
            let xs = &xb[ch * s..][..s];
            for (i, yv) in yb[ch * s..][..s].iter_mut().enumerate() {
                *yv = (xs[i] - m[i]) * r[i] * gv + bv;
            }
        }
    }
    (y, NormStats { mean, rstd })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Real>(
    (n, c, s): (usize, usize, usize),
    x: &[T],
    gamma: &[T],
    stats: &NormStats<T>,
    gy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    let inv_c = T::one() / T::from_usize(c);
    let mut sum_dxhat = vec![T::zero(); s];
    let mut sum_dxhat_xhat = vec![T::zero(); s];
    for b in 0..n {
        let m = &stats.mean[b * s..][..s];
        let r = &stats.rstd[b * s..][..s];
        sum_dxhat.fill(T::zero());
        sum_dxhat_xhat.fill(T::zero());
        for ch in 0..c {
            let xs = &x[(b * c + ch) * s..][..s];
            let gs = &gy[(b * c + ch) * s..][..s];
            let mut acc_g = T::zero();
            let mut acc_b = T::zero();
            for i in 0..s {
                let xhat = (xs[i] - m[i]) * r[i];
                let dxhat = gs[i] * gamma[ch];
                acc_g += gs[i] * xhat;
                acc_b += gs[i];
                sum_dxhat[i] += dxhat;
                sum_dxhat_xhat[i] += dxhat * xhat;
            }
            dg[ch] += acc_g;
            db[ch] += acc_b;
        }
        for ch in 0..c {
            let xs = &x[(b * c + ch) * s..][..s];
            let gs = &gy[(b * c + ch) * s..][..s];
            let out = &mut dx[(b * c + ch) * s..][..s];
            for i in 0..s {
                let xhat = (xs[i] - m[i]) * r[i];
                let dxhat = gs[i] * gamma[ch];
                out[i] = r[i] * (dxhat - sum_dxhat[i] * inv_c - xhat * sum_dxhat_xhat[i] * inv_c);
            }
        }
    }
    (dx, dg, db)
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let inner = T::from_f64(SQRT_2_OVER_PI) * (x + T::from_f64(GELU_CUBIC) * x * x * x);
    // 0.5 (1 + tanh z) == sigmoid(2z)
    x * sigmoid(inner + inner)
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let k = T::from_f64(SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_CUBIC);
    let inner = k * (x + a * x * x * x);
    let s = sigmoid(inner + inner);
    let dinner = k * (T::one() + T::from_f64(3.0) * a * x * x);
    s + (x + x) * s * (T::one() - s) * dinner
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// `ln(1 + e^x)`, evaluated without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::from_f64(20.0) {
        x
    } else if x < T::from_f64(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
