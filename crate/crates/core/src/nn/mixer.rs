//! Token mixers: the grouped depthwise ConvMixer and the SS2D GlobalMixer.

use alloc::format;
use alloc::vec::Vec;

use super::layers::Conv;
use super::params::ParamSpecs;
use super::ss2d::Ss2d;
use crate::autodiff::{Tape, Var};
use crate::config::{BlockConfig, ConvMixerKind, GlobalMixerKind};
use crate::tensor::Real;
use crate::{shape_err, Result};

/// A channel group and the depthwise convolutions summed over it.
/// An empty branch list is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGroup {
    pub width: usize,
    pub branches: Vec<Conv>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvMixer {
    pub channels: usize,
    pub groups: Vec<ConvGroup>,
}

fn transposed((h, w): (usize, usize)) -> (usize, usize) {
    (w, h)
}

impl ConvMixer {
    pub fn new(specs: &mut ParamSpecs, prefix: &str, cfg: &BlockConfig) -> Result<Self> {
        let sizes = cfg.group_sizes()?;
        let mut dw = |name: &str, width: usize, kernel| Conv::depthwise(specs, &format!("{prefix}.{name}"), width, kernel);
        let (sq, band) = (cfg.square_kernel, cfg.band_kernel);
        let groups = match cfg.conv_mixer {
            ConvMixerKind::Band | ConvMixerKind::Strip => alloc::vec![
                ConvGroup { width: sizes[0], branches: alloc::vec![dw("square", sizes[0], sq)] },
                ConvGroup {
                    width: sizes[1],
                    branches: alloc::vec![dw("band_w", sizes[1], band), dw("band_h", sizes[1], transposed(band))],
                },
                ConvGroup { width: sizes[2], branches: Vec::new() },
            ],
            ConvMixerKind::Dw3x3 => alloc::vec![ConvGroup { width: sizes[0], branches: alloc::vec![dw("square", sizes[0], sq)] }],
            ConvMixerKind::InceptionDw => alloc::vec![
                ConvGroup { width: sizes[0], branches: alloc::vec![dw("square", sizes[0], sq)] },
                ConvGroup { width: sizes[1], branches: alloc::vec![dw("band_w", sizes[1], band)] },
                ConvGroup { width: sizes[2], branches: alloc::vec![dw("band_h", sizes[2], transposed(band))] },
                ConvGroup { width: sizes[3], branches: Vec::new() },
            ],
        };
        Ok(ConvMixer { channels: cfg.channels, groups })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let c = tape.value(x).nchw()?.1;
        if c != self.channels {
            return Err(shape_err!("ConvMixer of width {} got {c} channels", self.channels));
        }
        if let [only] = self.groups.as_slice() {
            return Self::group_forward(only, tape, p, x);
        }
        let mut outs = Vec::with_capacity(self.groups.len());
        let mut start = 0;
        for g in &self.groups {
            let part = tape.slice_channels(x, start, g.width)?;
            outs.push(Self::group_forward(g, tape, p, part)?);
            start += g.width;
        }
        tape.concat_channels(&outs)
    }

    fn group_forward<T: Real>(g: &ConvGroup, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for conv in &g.branches {
            let y = conv.forward(tape, p, x)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        Ok(acc.unwrap_or(x))
    }
}

/// `x + expand(ss2d(compress(x)))`, or `x + ss2d(x)` without the bottleneck.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalMixer {
    pub compress: Option<Conv>,
    pub ss2d: Ss2d,
    pub expand: Option<Conv>,
}

impl GlobalMixer {
    pub fn new(specs: &mut ParamSpecs, prefix: &str, cfg: &BlockConfig, eps: f64) -> Result<Option<Self>> {
        let Some(ss_cfg) = cfg.ss2d_config()? else {
            return Ok(None);
        };
        let c = cfg.channels;
        let w = ss_cfg.channels;
        let bottleneck = cfg.global_mixer == GlobalMixerKind::Bottleneck;
        let compress = bottleneck.then(|| Conv::pointwise(specs, &format!("{prefix}.compress"), c, w, true));
        let ss2d = Ss2d::new(specs, &format!("{prefix}.ss2d"), ss_cfg, eps);
        let expand = bottleneck.then(|| Conv::pointwise(specs, &format!("{prefix}.expand"), w, c, true));
        Ok(Some(GlobalMixer { compress, ss2d, expand }))
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = match &self.compress {
            Some(conv) => conv.forward(tape, p, x)?,
            None => x,
        };
        let h = self.ss2d.forward(tape, p, h)?;
        let h = match &self.expand {
            Some(conv) => conv.forward(tape, p, h)?,
            None => h,
        };
        tape.add(x, h)
    }
}
