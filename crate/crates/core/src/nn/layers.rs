//! Convolution, normalization and linear layers.

use alloc::format;

use super::params::{Init, ParamId, ParamSpecs};
use crate::autodiff::{Tape, Var};
use crate::tensor::Real;
use crate::Result;

/// 2-D convolution, dense or depthwise, with an optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub depthwise: bool,
}

impl Conv {
    /// Dense convolution `c_in -> c_out`.
    pub fn dense(
        specs: &mut ParamSpecs,
        prefix: &str,
        (c_in, c_out): (usize, usize),
        kernel: (usize, usize),
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = c_in * kernel.0 * kernel.1;
        let weight = specs.declare(format!("{prefix}.weight"), &[c_out, c_in, kernel.0, kernel.1], Init::fan_in(fan_in));
        let bias = bias.then(|| specs.declare(format!("{prefix}.bias"), &[c_out], Init::fan_in(fan_in)));
        Conv { weight, bias, stride: (stride, stride), padding: (kernel.0 / 2, kernel.1 / 2), depthwise: false }
    }

    /// 1x1 dense convolution.
    pub fn pointwise(specs: &mut ParamSpecs, prefix: &str, c_in: usize, c_out: usize, bias: bool) -> Self {
        Self::dense(specs, prefix, (c_in, c_out), (1, 1), 1, bias)
    }

    /// Stride-1 depthwise convolution with extent-preserving padding.
    pub fn depthwise(specs: &mut ParamSpecs, prefix: &str, channels: usize, kernel: (usize, usize)) -> Self {
        let fan_in = kernel.0 * kernel.1;
        let weight = specs.declare(format!("{prefix}.weight"), &[channels, 1, kernel.0, kernel.1], Init::fan_in(fan_in));
        let bias = Some(specs.declare(format!("{prefix}.bias"), &[channels], Init::fan_in(fan_in)));
        Conv { weight, bias, stride: (1, 1), padding: (kernel.0 / 2, kernel.1 / 2), depthwise: true }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let bias = self.bias.map(|b| b.var(p));
        tape.conv2d(x, self.weight.var(p), bias, self.stride, self.padding, self.depthwise)
    }
}

/// Channel-wise layer normalization at every spatial site.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl Norm {
    pub fn new(specs: &mut ParamSpecs, prefix: &str, channels: usize, eps: f64) -> Self {
        Norm {
            gamma: specs.declare(format!("{prefix}.gamma"), &[channels], Init::Ones),
            beta: specs.declare(format!("{prefix}.beta"), &[channels], Init::Zeros),
            eps,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gamma.var(p), self.beta.var(p), T::from_f64(self.eps))
    }
}

/// Fully connected layer on `[N, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(specs: &mut ParamSpecs, prefix: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: specs.declare(format!("{prefix}.weight"), &[d_out, d_in], Init::fan_in(d_in)),
            bias: specs.declare(format!("{prefix}.bias"), &[d_out], Init::fan_in(d_in)),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        tape.linear(x, self.weight.var(p), Some(self.bias.var(p)))
    }
}
