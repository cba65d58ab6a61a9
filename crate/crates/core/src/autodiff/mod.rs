//! Reverse-mode differentiation on an append-only tape.
//!
//! Every operation evaluates eagerly, stores its output on the [`Tape`] and
//! remembers its inputs as [`Var`] handles. Operations are the variants of a
//! closed enum, each with its backward rule, so an op without a rule cannot
//! be recorded. Nodes only refer to earlier nodes, so a reverse sweep over
//! the tape is a valid topological order.

pub mod gradcheck;

use alloc::vec;
use alloc::vec::Vec;

use crate::kernels::{self, ConvGeom, NormStats};
use crate::ssm::selective::{self, ScanDims, ScanInputs};
use crate::ssm::Direction;
use crate::tensor::{Real, Tensor};
use crate::{config_err, shape_err, Result};

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckEntry, GradcheckReport};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Gelu(Var),
    Silu(Var),
    Softplus(Var),
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Slice { x: Var, start: usize },
    Concat(Vec<Var>),
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: NormStats<T> },
    AvgPool(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Sum(Var),
    Scan { u: Var, delta: Var, a: Var, b: Var, c: Var, d: Var, dims: ScanDims, dir: Direction },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), macs: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply–accumulates performed by convolutions, linear layers and scans so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.exp());
        self.push(out, Op::Exp(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::silu);
        self.push(out, Op::Silu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::softplus);
        self.push(out, Op::Softplus(a))
    }

    /// Convolution of `x [N, C, H, W]` with weight `[C_out, C_in or 1, kH, kW]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
        depthwise: bool,
    ) -> Result<Var> {
        let xs = self.value(x);
        let ws = self.value(w);
        let (n, c, h, wd) = xs.nchw()?;
        let [c_out, per_group, kh, kw] = ws.dims() else {
            return Err(shape_err!("conv weight must be rank 4, got {}", ws.shape()));
        };
        let expected_in = if depthwise { 1 } else { c };
        if *per_group != expected_in || (depthwise && *c_out != c) {
            return Err(shape_err!("input {} is incompatible with weight {}", xs.shape(), ws.shape()));
        }
        let geom = ConvGeom::new(n, c, (h, wd), *c_out, (*kh, *kw), stride, pad, depthwise)?;
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.numel() != geom.c_out {
                    return Err(shape_err!("bias {} for {} output channels", bv.shape(), geom.c_out));
                }
                Some(bv.data())
            }
            None => None,
        };
        let out = kernels::conv_forward(&geom, xs.data(), ws.data(), bias);
        let out = Tensor::new(&[n, geom.c_out, geom.oh, geom.ow], out)?;
        self.macs += geom.macs();
        Ok(self.push(out, Op::Conv { x, w, b, geom }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = crate::ops::slice_channels(self.value(x), start, len)?;
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor<T>> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let out = crate::ops::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Normalizes across channels at every site of `[N, C, H, W]` (or `[N, C]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let xs = self.value(x);
        let (n, c, h, w) = xs.nchw()?;
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.numel() != c || b.numel() != c {
            return Err(shape_err!("norm affine {} / {} for input {}", g.shape(), b.shape(), xs.shape()));
        }
        let (y, stats) = kernels::layer_norm_forward((n, c, h * w), xs.data(), g.data(), b.data(), eps);
        let out = Tensor::from_shape(xs.shape(), y)?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, stats }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = crate::ops::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::AvgPool(x)))
    }

    /// `x [N, in] · Wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let bias = b.map(|b| self.value(b).data());
        let out = crate::ops::linear(self.value(x), self.value(w), bias)?;
        let (n, d_out) = (out.dims()[0], out.dims()[1]);
        self.macs += (n * d_out * self.value(x).dims()[1]) as u64;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    /// Mean softmax cross-entropy of `[N, K]` logits; a scalar.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let loss = crate::ops::softmax_cross_entropy(lv, labels)?;
        let probs = crate::ops::softmax(lv)?.into_data();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Selective scan over the sites of a feature map in traversal order `dir`.
    ///
    /// `u`, `delta`: `[N, d, H, W]`; `a`: `[d, S]`; `b`, `c`: `[N, S, H, W]`;
    /// `d`: `[d]`. Outputs are written back at their sites, so the result is
    /// `[N, d, H, W]` regardless of direction.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
        dir: Direction,
    ) -> Result<Var> {
        let (n, ch, h, w) = self.value(u).nchw()?;
        self.value(delta).expect_same_shape(self.value(u))?;
        let state = self.value(b).nchw()?.1;
        if self.value(a).dims() != [ch, state] {
            return Err(shape_err!("A is {} but the scan needs [{ch}, {state}]", self.value(a).shape()));
        }
        let dims = ScanDims { batch: n, channels: ch, state, sites: h * w };
        let order = dir.order(h, w);
        let y = selective::scan_forward(&dims, &order, &self.scan_inputs(u, delta, a, b, c, d))?;
        let out = Tensor::new(&[n, ch, h, w], y)?;
        self.macs += dims.macs();
        Ok(self.push(out, Op::Scan { u, delta, a, b, c, d, dims, dir }))
    }

    fn scan_inputs(&self, u: Var, delta: Var, a: Var, b: Var, c: Var, d: Var) -> ScanInputs<'_, T> {
        ScanInputs {
            u: self.value(u).data(),
            delta: self.value(delta).data(),
            a: self.value(a).data(),
            b: self.value(b).data(),
            c: self.value(c).data(),
            d: self.value(d).data(),
        }
    }

    /// Gradients of the scalar `loss` with respect to every recorded value
    /// that it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(config_err!("backward needs a scalar loss, got shape {}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_shape(self.value(loss).shape(), vec![T::one()])?);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<T>| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        let shaped = |v: Var, data: Vec<T>| Tensor::from_shape(self.value(v).shape(), data);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |gv, bv| gv * bv)?)?;
                acc(*b, g.zip_map(self.value(*a), |gv, av| gv * av)?)?;
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s))?,
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y)?)?,
            Op::Gelu(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * kernels::gelu_grad(x))?)?,
            Op::Silu(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * kernels::silu_grad(x))?)?,
            Op::Softplus(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * kernels::sigmoid(x))?)?,
            Op::Conv { x, w, b, geom } => {
                let gx = kernels::conv_backward_input(geom, g.data(), self.value(*w).data());
                let (gw, gb) = kernels::conv_backward_params(geom, g.data(), self.value(*x).data());
                acc(*x, shaped(*x, gx)?)?;
                acc(*w, shaped(*w, gw)?)?;
                if let Some(b) = b {
                    acc(*b, shaped(*b, gb)?)?;
                }
            }
            Op::Slice { x, start } => {
                let (n, c, h, w) = self.value(*x).nchw()?;
                let len = node.value.nchw()?.1;
                let hw = h * w;
                let mut gx = vec![T::zero(); n * c * hw];
                for bi in 0..n {
                    gx[(bi * c + start) * hw..(bi * c + start + len) * hw]
                        .copy_from_slice(&g.data()[bi * len * hw..(bi + 1) * len * hw]);
                }
                acc(*x, shaped(*x, gx)?)?;
            }
            Op::Concat(parts) => {
                let (n, total, h, w) = node.value.nchw()?;
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).nchw()?.1;
                    let mut gp = Vec::with_capacity(n * pc * hw);
                    for bi in 0..n {
                        gp.extend_from_slice(&g.data()[(bi * total + offset) * hw..(bi * total + offset + pc) * hw]);
                    }
                    acc(p, shaped(p, gp)?)?;
                    offset += pc;
                }
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let (n, c, h, w) = self.value(*x).nchw()?;
                let (dx, dg, db) = kernels::layer_norm_backward(
                    (n, c, h * w),
                    self.value(*x).data(),
                    self.value(*gamma).data(),
                    stats,
                    g.data(),
                );
                acc(*x, shaped(*x, dx)?)?;
                acc(*gamma, shaped(*gamma, dg)?)?;
                acc(*beta, shaped(*beta, db)?)?;
            }
            Op::AvgPool(x) => {
                let (_, _, h, w) = self.value(*x).nchw()?;
                let hw = h * w;
                let inv = T::one() / T::from_usize(hw);
                let gx: Vec<T> = g.data().iter().flat_map(|&gv| core::iter::repeat_n(gv * inv, hw)).collect();
                acc(*x, shaped(*x, gx)?)?;
            }
            Op::Linear { x, w, b } => {
                let (n, d_in) = (self.value(*x).dims()[0], self.value(*x).dims()[1]);
                let d_out = self.value(*w).dims()[0];
                let mut gx = vec![T::zero(); n * d_in];
                kernels::gemm_nn(n, d_out, d_in, g.data(), self.value(*w).data(), &mut gx);
                let mut gw = vec![T::zero(); d_out * d_in];
                kernels::gemm_tn(d_out, n, d_in, g.data(), self.value(*x).data(), &mut gw);
                acc(*x, shaped(*x, gx)?)?;
                acc(*w, shaped(*w, gw)?)?;
                if let Some(b) = b {
                    let mut gb = vec![T::zero(); d_out];
                    for row in g.data().chunks(d_out) {
                        gb.iter_mut().zip(row).for_each(|(a, &r)| *a += r);
                    }
                    acc(*b, shaped(*b, gb)?)?;
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.value(*logits).dims()[1];
                let scale = g.data()[0] / T::from_usize(labels.len());
                let mut gl = probs.clone();
                for (row, &label) in gl.chunks_mut(k).zip(labels) {
                    row[label] -= T::one();
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                acc(*logits, shaped(*logits, gl)?)?;
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                acc(*x, self.value(*x).map(|_| gv))?;
            }
            Op::Scan { u, delta, a, b, c, d, dims, dir } => {
                let (_, _, h, w) = self.value(*u).nchw()?;
                let order = dir.order(h, w);
                let sg = selective::scan_backward(dims, &order, &self.scan_inputs(*u, *delta, *a, *b, *c, *d), g.data())?;
                acc(*u, shaped(*u, sg.u)?)?;
                acc(*delta, shaped(*delta, sg.delta)?)?;
                acc(*a, shaped(*a, sg.a)?)?;
                acc(*b, shaped(*b, sg.b)?)?;
                acc(*c, shaped(*c, sg.c)?)?;
                acc(*d, shaped(*d, sg.d)?)?;
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`]: gradients of the recorded leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when `v` does not influence the loss.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros_like(tape.value(v)))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(dims, f).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3, 4, 4], |i| i as f64));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identity_depthwise_chain() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3, 5, 5], |i| (i as f64).sin()));
        let w = tape.leaf(Tensor::full(&[3, 1, 1, 1], 1.0).unwrap());
        let y = tape.conv2d(x, w, None, (1, 1), (0, 0), true).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2]).unwrap());
        assert!(matches!(tape.backward(x), Err(crate::Error::Config(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[3], 2.0).unwrap());
        let unused = tape.leaf(Tensor::full(&[4], 1.0).unwrap());
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(&tape, unused), Tensor::zeros(&[4]).unwrap());
    }

    #[test]
    fn shared_input_accumulates() {
        // d/dx sum(x * x + x) = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[5], |i| i as f64 - 2.0));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.add(sq, x).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        for (i, &v) in g.get(x).unwrap().data().iter().enumerate() {
            assert_eq!(v, 2.0 * (i as f64 - 2.0) + 1.0);
        }
    }

    #[test]
    fn mac_counter_tracks_convolutions() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 4, 6, 6]).unwrap());
        let w = tape.leaf(Tensor::zeros(&[8, 4, 3, 3]).unwrap());
        tape.conv2d(x, w, None, (2, 2), (1, 1), false).unwrap();
        assert_eq!(tape.macs(), (2 * 3 * 3 * 8 * 4 * 9) as u64);
    }
}
