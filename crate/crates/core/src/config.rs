//! Declarative backbone descriptions and the named presets.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fraction::Fraction;
use crate::ssm::{default_dt_rank, Ss2dConfig};
use crate::{config_err, Error, Result};

/// State dimension of every SS2D scan unless a config overrides it.
///
/// Chosen so that the T/S/B presets land on their published parameter and
/// MAC totals; see the analyzer tests.
pub const DEFAULT_STATE_DIM: usize = 8;

/// Spatial token mixer inside the ConvMixer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMixerKind {
    /// `[square 3x3, band 3x11 + 11x3, identity]`.
    Band,
    /// Same split with 1-D strips `1xk + kx1` on the band group.
    Strip,
    /// One 3x3 depthwise convolution over all channels.
    Dw3x3,
    /// Four groups `[3x3, 1xk, kx1, identity]`.
    InceptionDw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalMixerKind {
    None,
    /// 1x1 compress, SS2D at the reduced width, 1x1 expand, residual.
    Bottleneck,
    /// SS2D at full width with a residual.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsmSettings {
    pub state_dim: usize,
    /// `None` means `ceil(width / 16)`.
    #[serde(default)]
    pub dt_rank: Option<usize>,
}

impl Default for SsmSettings {
    fn default() -> Self {
        SsmSettings { state_dim: DEFAULT_STATE_DIM, dt_rank: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub channels: usize,
    pub conv_mixer: ConvMixerKind,
    /// Fraction of channels per convolution group.
    pub conv_group_ratio: Fraction,
    pub square_kernel: (usize, usize),
    /// Wide band kernel; the tall one is its transpose.
    pub band_kernel: (usize, usize),
    pub global_mixer: GlobalMixerKind,
    /// Bottleneck width as a fraction of `channels`.
    pub bottleneck_ratio: Fraction,
    pub mlp_ratio: usize,
    pub ssm: SsmSettings,
}

impl BlockConfig {
    pub fn new(channels: usize) -> Self {
        BlockConfig {
            channels,
            conv_mixer: ConvMixerKind::Band,
            conv_group_ratio: Fraction::new(1, 8).expect("nonzero"),
            square_kernel: (3, 3),
            band_kernel: (3, 11),
            global_mixer: GlobalMixerKind::Bottleneck,
            bottleneck_ratio: Fraction::new(1, 2).expect("nonzero"),
            mlp_ratio: 4,
            ssm: SsmSettings::default(),
        }
    }

    /// Group split ratios of the ConvMixer, identity group last.
    pub fn split_ratios(&self) -> Result<Vec<Fraction>> {
        let g = self.conv_group_ratio;
        Ok(match self.conv_mixer {
            ConvMixerKind::Band | ConvMixerKind::Strip => alloc::vec![g, g, g.one_minus(2)?],
            ConvMixerKind::Dw3x3 => alloc::vec![Fraction::ONE],
            ConvMixerKind::InceptionDw => alloc::vec![g, g, g, g.one_minus(3)?],
        })
    }

    pub fn group_sizes(&self) -> Result<Vec<usize>> {
        crate::ops::split_sizes(self.channels, &self.split_ratios()?)
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.channels
    }

    /// Width the SS2D scans run at, if the block has a global mixer.
    pub fn ss2d_width(&self) -> Result<Option<usize>> {
        match self.global_mixer {
            GlobalMixerKind::None => Ok(None),
            GlobalMixerKind::Plain => Ok(Some(self.channels)),
            GlobalMixerKind::Bottleneck => {
                let w = self.bottleneck_ratio.exact_mul(self.channels).ok_or_else(|| {
                    config_err!("bottleneck {} of {} channels is not an integer", self.bottleneck_ratio, self.channels)
                })?;
                if w == 0 {
                    return Err(config_err!("bottleneck width of {} channels is zero", self.channels));
                }
                Ok(Some(w))
            }
        }
    }

    pub fn ss2d_config(&self) -> Result<Option<Ss2dConfig>> {
        self.ss2d_width()?
            .map(|w| Ss2dConfig::new(w, self.ssm.state_dim, Some(self.ssm.dt_rank.unwrap_or_else(|| default_dt_rank(w)))))
            .transpose()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.mlp_ratio == 0 {
            return Err(config_err!("block needs positive channels and MLP ratio"));
        }
        self.group_sizes()?;
        self.ss2d_config()?;
        for (name, (kh, kw)) in [("square", self.square_kernel), ("band", self.band_kernel)] {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(config_err!("{name} kernel {kh}x{kw} must have odd extents"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub block: BlockConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// Two 3x3 stride-2 convolutions (×4 reduction).
    Standard,
    /// One 3x3 stride-2 convolution (×2 reduction), for small inputs.
    Single,
}

impl StemKind {
    pub fn stride(self) -> usize {
        match self {
            StemKind::Standard => 4,
            StemKind::Single => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub in_channels: usize,
    pub stem: StemKind,
    pub stages: Vec<StageConfig>,
    pub num_classes: usize,
    /// Hidden width of the classifier MLP as a multiple of the last embed dim.
    pub head_hidden_ratio: usize,
    pub norm_eps: f64,
}

pub const PRESETS: [&str; 8] =
    ["T", "S", "B", "T-no-globalmixer", "T-plain-ss2d", "T-strip-conv", "T-dw3x3", "T-inception-dw"];

impl ModelConfig {
    pub fn from_stages(name: &str, dims: &[usize], blocks: &[usize], num_classes: usize) -> Self {
        ModelConfig {
            name: name.to_string(),
            in_channels: 3,
            stem: StemKind::Standard,
            stages: dims
                .iter()
                .zip(blocks)
                .map(|(&d, &n)| StageConfig { embed_dim: d, num_blocks: n, block: BlockConfig::new(d) })
                .collect(),
            num_classes,
            head_hidden_ratio: 3,
            norm_eps: 1e-6,
        }
    }

    /// Desk-scale model for 32x32 inputs: single-conv stem, dims `[16, 32, 64, 128]`.
    pub fn toy(num_classes: usize) -> Self {
        let mut cfg = Self::from_stages("toy", &[16, 32, 64, 128], &[1, 1, 2, 1], num_classes);
        cfg.stem = StemKind::Standard;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        let t = || Self::from_stages("T", &[72, 144, 288, 576], &[3, 3, 12, 3], 1000);
        let mut cfg = match name {
            "T" => t(),
            "S" => Self::from_stages("S", &[72, 144, 288, 576], &[4, 4, 32, 4], 1000),
            "B" => Self::from_stages("B", &[96, 192, 384, 768], &[4, 4, 34, 4], 1000),
            "T-no-globalmixer" => t().map_blocks(|b| b.global_mixer = GlobalMixerKind::None),
            "T-plain-ss2d" => t().map_blocks(|b| b.global_mixer = GlobalMixerKind::Plain),
            "T-strip-conv" => t().map_blocks(|b| {
                b.conv_mixer = ConvMixerKind::Strip;
                b.band_kernel = (1, 11);
            }),
            "T-dw3x3" => t().map_blocks(|b| b.conv_mixer = ConvMixerKind::Dw3x3),
            "T-inception-dw" => t().map_blocks(|b| {
                b.conv_mixer = ConvMixerKind::InceptionDw;
                b.band_kernel = (1, 11);
            }),
            "toy" => Self::toy(4),
            "toy-no-globalmixer" => Self::toy(4).map_blocks(|b| b.global_mixer = GlobalMixerKind::None),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        cfg.name = name.to_string();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `f` to every stage's block config.
    pub fn map_blocks(mut self, f: impl Fn(&mut BlockConfig)) -> Self {
        for s in &mut self.stages {
            f(&mut s.block);
        }
        self
    }

    /// Overall spatial reduction from input to the last stage.
    pub fn total_stride(&self) -> usize {
        self.stem.stride() << self.stages.len().saturating_sub(1)
    }

    pub fn head_hidden(&self) -> usize {
        self.head_hidden_ratio * self.stages.last().map_or(0, |s| s.embed_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(config_err!("model has no stages"));
        }
        if self.in_channels == 0 || self.num_classes == 0 || self.head_hidden_ratio == 0 {
            return Err(config_err!("input channels, classes and head ratio must be positive"));
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 {
            return Err(config_err!("norm eps must be positive"));
        }
        if self.stem == StemKind::Standard && !self.stages[0].embed_dim.is_multiple_of(2) {
            return Err(config_err!("the two-conv stem needs an even first embed dim"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.num_blocks == 0 {
                return Err(config_err!("stage {i} has no blocks"));
            }
            if s.block.channels != s.embed_dim {
                return Err(config_err!("stage {i} block width {} differs from embed dim {}", s.block.channels, s.embed_dim));
            }
            if i > 0 && s.embed_dim != 2 * self.stages[i - 1].embed_dim {
                return Err(config_err!(
                    "stage {i} embed dim {} is not twice the previous {}",
                    s.embed_dim,
                    self.stages[i - 1].embed_dim
                ));
            }
            s.block.validate().map_err(|e| config_err!("stage {i}: {e}"))?;
        }
        Ok(())
    }

    /// Spatial extent after each stage for a square input of side `resolution`.
    pub fn stage_extents(&self, resolution: usize) -> Result<Vec<usize>> {
        let stride = self.total_stride();
        if resolution < stride || !resolution.is_multiple_of(stride) {
            return Err(config_err!("input extent {resolution} must be a positive multiple of {stride}"));
        }
        Ok((0..self.stages.len()).map(|i| resolution / (self.stem.stride() << i)).collect())
    }

    pub fn describe(&self) -> String {
        let dims: Vec<usize> = self.stages.iter().map(|s| s.embed_dim).collect();
        let blocks: Vec<usize> = self.stages.iter().map(|s| s.num_blocks).collect();
        format!("{} dims {:?} blocks {:?} classes {}", self.name, dims, blocks, self.num_classes)
    }
}
