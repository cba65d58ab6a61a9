//! The InceptionMamba block and the layers around the stages.

use alloc::format;

use super::layers::{Conv, Linear, Norm};
use super::mixer::{ConvMixer, GlobalMixer};
use super::params::ParamSpecs;
use crate::autodiff::{Tape, Var};
use crate::config::{BlockConfig, StemKind};
use crate::tensor::Real;
use crate::Result;

/// `fc2(gelu(fc1(y)))` with 1x1 convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub fc1: Conv,
    pub fc2: Conv,
}

impl Mlp {
    pub fn new(specs: &mut ParamSpecs, prefix: &str, channels: usize, hidden: usize) -> Self {
        Mlp {
            fc1: Conv::pointwise(specs, &format!("{prefix}.fc1"), channels, hidden, true),
            fc2: Conv::pointwise(specs, &format!("{prefix}.fc2"), hidden, channels, true),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], y: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, y)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, p, h)
    }
}

/// ```text
/// X'  = ConvMixer(X)
/// X'' = GlobalMixer(X')
/// out = MLP(Norm(X'')) + X
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct InceptionMambaBlock {
    pub conv_mixer: ConvMixer,
    pub global_mixer: Option<GlobalMixer>,
    pub norm: Norm,
    pub mlp: Mlp,
}

impl InceptionMambaBlock {
    pub fn new(specs: &mut ParamSpecs, prefix: &str, cfg: &BlockConfig, eps: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(InceptionMambaBlock {
            conv_mixer: ConvMixer::new(specs, &format!("{prefix}.conv_mixer"), cfg)?,
            global_mixer: GlobalMixer::new(specs, &format!("{prefix}.global_mixer"), cfg, eps)?,
            norm: Norm::new(specs, &format!("{prefix}.norm"), cfg.channels, eps),
            mlp: Mlp::new(specs, &format!("{prefix}.mlp"), cfg.channels, cfg.mlp_hidden()),
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = self.conv_mixer.forward(tape, p, x)?;
        let h = match &self.global_mixer {
            Some(gm) => gm.forward(tape, p, h)?,
            None => h,
        };
        let y = self.norm.forward(tape, p, h)?;
        let m = self.mlp.forward(tape, p, y)?;
        tape.add(m, x)
    }
}

/// Strided convolution followed by a norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNorm {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvNorm {
    /// 3x3 stride-2 convolution without bias (the norm absorbs it).
    pub fn strided(specs: &mut ParamSpecs, prefix: &str, c_in: usize, c_out: usize, eps: f64) -> Self {
        ConvNorm {
            conv: Conv::dense(specs, &format!("{prefix}.conv"), (c_in, c_out), (3, 3), 2, false),
            norm: Norm::new(specs, &format!("{prefix}.norm"), c_out, eps),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = self.conv.forward(tape, p, x)?;
        self.norm.forward(tape, p, h)
    }
}

/// Stem: one or two strided conv-norm pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbed {
    pub layers: alloc::vec::Vec<ConvNorm>,
}

impl PatchEmbed {
    pub fn new(specs: &mut ParamSpecs, prefix: &str, kind: StemKind, c_in: usize, dim: usize, eps: f64) -> Self {
        let layers = match kind {
            StemKind::Standard => alloc::vec![
                ConvNorm::strided(specs, &format!("{prefix}.0"), c_in, dim / 2, eps),
                ConvNorm::strided(specs, &format!("{prefix}.1"), dim / 2, dim, eps),
            ],
            StemKind::Single => alloc::vec![ConvNorm::strided(specs, &format!("{prefix}.0"), c_in, dim, eps)],
        };
        PatchEmbed { layers }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        self.layers.iter().try_fold(x, |h, l| l.forward(tape, p, h))
    }
}

/// `fc2(norm(gelu(fc1(pool(x)))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub fc1: Linear,
    pub norm: Norm,
    pub fc2: Linear,
}

impl Head {
    pub fn new(specs: &mut ParamSpecs, prefix: &str, channels: usize, hidden: usize, classes: usize, eps: f64) -> Self {
        Head {
            fc1: Linear::new(specs, &format!("{prefix}.fc1"), channels, hidden),
            norm: Norm::new(specs, &format!("{prefix}.norm"), hidden, eps),
            fc2: Linear::new(specs, &format!("{prefix}.fc2"), hidden, classes),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = tape.global_avg_pool(x)?;
        let h = self.fc1.forward(tape, p, h)?;
        let h = tape.gelu(h);
        let h = self.norm.forward(tape, p, h)?;
        self.fc2.forward(tape, p, h)
    }
}
