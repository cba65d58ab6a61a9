//! Forward tensor operations on owned [`Tensor`] values.
//!
//! These are the gradient-free entry points. The tape in [`crate::autodiff`]
//! records the same kernels together with their backward rules.

use alloc::vec;
use alloc::vec::Vec;

use crate::fraction::Fraction;
use crate::kernels::{self, ConvGeom};
use crate::tensor::{Real, Tensor};
use crate::{config_err, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grouping {
    /// One filter per channel, `groups == channels`.
    Depthwise,
    Dense,
}

/// Weights and geometry of a 2-D convolution.
///
/// Weights are `[C_out, 1, kH, kW]` for depthwise and `[C_out, C_in, kH, kW]`
/// for dense kernels.
#[derive(Clone, Debug)]
pub struct ConvKernel<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub grouping: Grouping,
}

impl<T: Real> ConvKernel<T> {
    pub fn depthwise(weight: Tensor<T>, padding: (usize, usize)) -> Self {
        ConvKernel { weight, bias: None, stride: (1, 1), padding, grouping: Grouping::Depthwise }
    }

    pub fn dense(weight: Tensor<T>, stride: (usize, usize), padding: (usize, usize)) -> Self {
        ConvKernel { weight, bias: None, stride, padding, grouping: Grouping::Dense }
    }

    pub fn with_bias(mut self, bias: Vec<T>) -> Self {
        self.bias = Some(bias);
        self
    }

    /// Validates the kernel against an input shape.
    pub fn geometry(&self, x: &Tensor<T>) -> Result<ConvGeom> {
        let (n, c, h, w) = x.nchw()?;
        let [c_out, per_group, kh, kw] = self.weight.dims() else {
            return Err(shape_err!("conv weight must be rank 4, got {}", self.weight.shape()));
        };
        let depthwise = self.grouping == Grouping::Depthwise;
        let expected_in = if depthwise { 1 } else { c };
        if *per_group != expected_in || (depthwise && *c_out != c) {
            return Err(shape_err!(
                "input {} is incompatible with {:?} weight {}",
                x.shape(),
                self.grouping,
                self.weight.shape()
            ));
        }
        if let Some(b) = &self.bias {
            if b.len() != *c_out {
                return Err(shape_err!("bias of length {} for {} output channels", b.len(), c_out));
            }
        }
        ConvGeom::new(n, c, (h, w), *c_out, (*kh, *kw), self.stride, self.padding, depthwise)
    }
}

/// 2-D convolution. Output extents are `floor((in + 2p - k) / s) + 1`.
pub fn conv2d<T: Real>(x: &Tensor<T>, k: &ConvKernel<T>) -> Result<Tensor<T>> {
    let g = k.geometry(x)?;
    let out = kernels::conv_forward(&g, x.data(), k.weight.data(), k.bias.as_deref());
    Tensor::new(&[g.batch, g.c_out, g.oh, g.ow], out)
}

/// Same contract as [`conv2d`], evaluated by direct accumulation.
pub fn conv2d_direct<T: Real>(x: &Tensor<T>, k: &ConvKernel<T>) -> Result<Tensor<T>> {
    let g = k.geometry(x)?;
    let out = kernels::conv_direct(&g, x.data(), k.weight.data(), k.bias.as_deref());
    Tensor::new(&[g.batch, g.c_out, g.oh, g.ow], out)
}

/// 1×1 dense convolution: a per-pixel matrix product `C_in -> C_out`.
pub fn pointwise_conv<T: Real>(x: &Tensor<T>, k: &ConvKernel<T>) -> Result<Tensor<T>> {
    let dims = k.weight.dims();
    if k.grouping != Grouping::Dense || dims.len() != 4 || dims[2] != 1 || dims[3] != 1 {
        return Err(config_err!(
            "pointwise convolution needs a dense 1x1 kernel, got {:?} weight {}",
            k.grouping,
            k.weight.shape()
        ));
    }
    if k.stride != (1, 1) || k.padding != (0, 0) {
        return Err(config_err!("pointwise convolution takes stride 1 and no padding"));
    }
    conv2d(x, k)
}

/// Channel group sizes for `ratios`: `floor(r * C)` for every group but the
/// last, which takes the remainder.
pub fn split_sizes(channels: usize, ratios: &[Fraction]) -> Result<Vec<usize>> {
    if ratios.is_empty() || !Fraction::sums_to_one(ratios) {
        return Err(config_err!("split ratios {ratios:?} do not sum to 1"));
    }
    let mut sizes: Vec<usize> = ratios[..ratios.len() - 1].iter().map(|r| r.floor_mul(channels)).collect();
    let taken: usize = sizes.iter().sum();
    sizes.push(channels - taken);
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(config_err!("channel group {i} is empty when splitting {channels} channels by {ratios:?}"));
    }
    Ok(sizes)
}

/// Copies channels `start..start + len` out of an `[N, C, H, W]` tensor.
pub fn slice_channels<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    if len == 0 || start + len > c {
        return Err(shape_err!("channel slice {start}..{} out of range for {}", start + len, x.shape()));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for b in 0..n {
        out.extend_from_slice(&x.data()[(b * c + start) * hw..(b * c + start + len) * hw]);
    }
    let dims: Vec<usize> = if x.dims().len() == 2 { vec![n, len] } else { vec![n, len, h, w] };
    Tensor::new(&dims, out)
}

/// Splits along channels into groups `[square, band, identity]` (or any number of groups).
pub fn split_channels<T: Real>(x: &Tensor<T>, ratios: &[Fraction]) -> Result<Vec<Tensor<T>>> {
    let (_, c, _, _) = x.nchw()?;
    let sizes = split_sizes(c, ratios)?;
    split_channels_by(x, &sizes)
}

pub fn split_channels_by<T: Real>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (_, c, _, _) = x.nchw()?;
    if sizes.iter().sum::<usize>() != c {
        return Err(shape_err!("group sizes {sizes:?} do not cover {c} channels"));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let part = slice_channels(x, start, len);
            start += len;
            part
        })
        .collect()
}

pub fn concat_channels<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
    let (n, _, h, w) = first.nchw()?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.nchw()?;
        if (pn, ph, pw) != (n, h, w) || p.dims().len() != first.dims().len() {
            return Err(shape_err!("cannot concat {} with {}", first.shape(), p.shape()));
        }
        total += pc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for p in parts {
            let pc = p.nchw()?.1;
            out.extend_from_slice(&p.data()[b * pc * hw..(b + 1) * pc * hw]);
        }
    }
    let dims: Vec<usize> = if first.dims().len() == 2 { vec![n, total] } else { vec![n, total, h, w] };
    Tensor::new(&dims, out)
}

/// Layer normalization across channels at every spatial site.
pub fn layer_norm_channels<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T], eps: T) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    if gamma.len() != c || beta.len() != c {
        return Err(shape_err!("norm affine of length {}/{} for {}", gamma.len(), beta.len(), x.shape()));
    }
    let (y, _) = kernels::layer_norm_forward((n, c, h * w), x.data(), gamma, beta, eps);
    Tensor::from_shape(x.shape(), y)
}

pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(kernels::gelu)
}

pub fn silu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(kernels::silu)
}

/// Mean over spatial extents: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    let hw = h * w;
    let inv = T::one() / T::from_usize(hw);
    let out = x.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::new(&[n, c], out)
}

/// `x [N, in] · Wᵀ + b` with `W [out, in]`.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>) -> Result<Tensor<T>> {
    let [n, d_in] = x.dims() else {
        return Err(shape_err!("linear input must be [N, in], got {}", x.shape()));
    };
    let [d_out, w_in] = weight.dims() else {
        return Err(shape_err!("linear weight must be [out, in], got {}", weight.shape()));
    };
    if w_in != d_in {
        return Err(shape_err!("input {} vs weight {}", x.shape(), weight.shape()));
    }
    let mut out = vec![T::zero(); n * d_out];
    kernels::gemm_nt(*n, *d_in, *d_out, x.data(), weight.data(), &mut out);
    if let Some(b) = bias {
        if b.len() != *d_out {
            return Err(shape_err!("bias of length {} for {d_out} outputs", b.len()));
        }
        for row in out.chunks_mut(*d_out) {
            row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
        }
    }
    Tensor::new(&[*n, *d_out], out)
}

/// Row-wise softmax probabilities of `[N, K]` logits.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims() else {
        return Err(shape_err!("softmax expects [N, K], got {}", logits.shape()));
    };
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(*k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::from_shape(logits.shape(), out)
}

/// Mean cross-entropy of `[N, K]` logits against integer labels.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let [n, k] = logits.dims() else {
        return Err(shape_err!("cross-entropy expects [N, K] logits, got {}", logits.shape()));
    };
    if labels.len() != *n {
        return Err(shape_err!("{} labels for {n} rows", labels.len()));
    }
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(*k).zip(labels) {
        if label >= *k {
            return Err(config_err!("label {label} out of range for {k} classes"));
        }
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        total += lse - row[label];
    }
    Ok(total / T::from_usize(*n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac(n: u32, d: u32) -> Fraction {
        Fraction::new(n, d).unwrap()
    }

    #[test]
    fn group_sizes_for_table_widths() {
        let r = [frac(1, 8), frac(1, 8), frac(3, 4)];
        assert_eq!(split_sizes(72, &r).unwrap(), [9, 9, 54]);
        assert_eq!(split_sizes(96, &r).unwrap(), [12, 12, 72]);
        // floor rule, remainder to the identity group
        assert_eq!(split_sizes(20, &r).unwrap(), [2, 2, 16]);
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let err = split_sizes(72, &[frac(1, 8), frac(1, 8)]).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn identity_depthwise_kernel() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 5, 4], |i| (i as f32 * 0.7).sin()).unwrap();
        let k = ConvKernel::depthwise(Tensor::full(&[3, 1, 1, 1], 1.0).unwrap(), (0, 0))
            .with_bias(vec![0.0; 3]);
        assert_eq!(conv2d(&x, &k).unwrap(), x);
    }

    #[test]
    fn band_padding_preserves_extent() {
        let x = Tensor::<f32>::zeros(&[1, 9, 14, 14]).unwrap();
        let wide = ConvKernel::depthwise(Tensor::zeros(&[9, 1, 3, 11]).unwrap(), (1, 5));
        let tall = ConvKernel::depthwise(Tensor::zeros(&[9, 1, 11, 3]).unwrap(), (5, 1));
        assert_eq!(conv2d(&x, &wide).unwrap().dims(), &[1, 9, 14, 14]);
        assert_eq!(conv2d(&x, &tall).unwrap().dims(), &[1, 9, 14, 14]);
    }

    #[test]
    fn conv_shape_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 4, 8, 8]).unwrap();
        let k = ConvKernel::dense(Tensor::zeros(&[2, 3, 3, 3]).unwrap(), (1, 1), (1, 1));
        let msg = alloc::format!("{}", conv2d(&x, &k).unwrap_err());
        assert!(msg.contains("[1, 4, 8, 8]") && msg.contains("[2, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn pointwise_hand_product() {
        let x = Tensor::<f32>::new(&[1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2, 1, 1], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let y = pointwise_conv(&x, &ConvKernel::dense(w, (1, 1), (0, 0))).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
    }

    #[test]
    fn pointwise_rejects_spatial_kernel() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]).unwrap();
        let k = ConvKernel::dense(Tensor::zeros(&[2, 2, 3, 3]).unwrap(), (1, 1), (1, 1));
        assert!(matches!(pointwise_conv(&x, &k), Err(crate::Error::Config(_))));
    }

    #[test]
    fn concat_constant_channels() {
        let a = Tensor::<f32>::zeros(&[1, 1, 3, 3]).unwrap();
        let b = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0).unwrap();
        let c = concat_channels(&[a, b]).unwrap();
        assert_eq!(global_avg_pool(&c).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 1, 3, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[1, 1, 3, 4]).unwrap();
        assert!(concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn norm_degenerate_cases() {
        let x = Tensor::<f64>::full(&[1, 4, 2, 2], 3.5).unwrap();
        let y = layer_norm_channels(&x, &[1.0; 4], &[0.0; 4], 1e-6).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let x = Tensor::<f64>::from_fn(&[1, 4, 2, 2], |i| i as f64).unwrap();
        let y = layer_norm_channels(&x, &[0.0; 4], &[2.5; 4], 1e-6).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn pooling_and_linear() {
        let x = Tensor::<f32>::full(&[2, 3, 4, 4], 1.25).unwrap();
        assert!(global_avg_pool(&x).unwrap().data().iter().all(|&v| v == 1.25));
        let x = Tensor::<f32>::new(&[1, 2], vec![1.0, -1.0]).unwrap();
        let w = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let y = linear(&x, &w, Some(&[0.5, 0.5, 0.5])).unwrap();
        assert_eq!(y.data(), &[1.5, -0.5, 0.5]);
    }

    #[test]
    fn confident_cross_entropy_is_small() {
        let logits = Tensor::<f64>::new(&[1, 2], vec![10.0, -10.0]).unwrap();
        let loss = softmax_cross_entropy(&logits, &[0]).unwrap();
        // log(1 + e^-20)
        assert!((loss - (-20.0f64).exp().ln_1p()).abs() < 1e-15);
        assert!(loss < 1e-4);
        assert!(softmax_cross_entropy(&logits, &[2]).is_err());
    }
}
