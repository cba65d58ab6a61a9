//! Closed-form parameter and multiply–accumulate accounting.
//!
//! Counts are derived from a [`ModelConfig`] alone, layer by layer, without
//! building the model. One MAC is one multiply–accumulate; norms,
//! activations, pooling and residual additions cost nothing. A scan costs
//! `4N + 1` MACs per channel and site (exp, input, decay, readout per state
//! entry, plus the skip term).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{BlockConfig, ConvMixerKind, GlobalMixerKind, ModelConfig, StemKind, DEFAULT_STATE_DIM};
use crate::model::Architecture;
use crate::nn::ParamSpecs;
use crate::ssm::Ss2dConfig;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub module: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub model: String,
    pub resolution: usize,
    pub state_dim: usize,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
}

/// Parameters and MACs of a single layer or a sum of layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Cost {
    params: u64,
    macs: u64,
}

impl core::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost { params: self.params + o.params, macs: self.macs + o.macs }
    }
}

impl core::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

fn u(v: usize) -> u64 {
    v as u64
}

/// Depthwise `k` convolution at `sites` output positions, with bias.
fn depthwise(c: usize, (kh, kw): (usize, usize), sites: usize) -> Cost {
    Cost { params: u(c * kh * kw + c), macs: u(sites * c * kh * kw) }
}

fn dense(c_in: usize, c_out: usize, (kh, kw): (usize, usize), sites: usize, bias: bool) -> Cost {
    let w = c_out * c_in * kh * kw;
    Cost { params: u(w + if bias { c_out } else { 0 }), macs: u(sites * w) }
}

fn norm(c: usize) -> Cost {
    Cost { params: u(2 * c), macs: 0 }
}

fn linear(d_in: usize, d_out: usize) -> Cost {
    Cost { params: u(d_in * d_out + d_out), macs: u(d_in * d_out) }
}

fn ss2d(cfg: &Ss2dConfig, sites: usize) -> Cost {
    let Ss2dConfig { channels: w, state_dim: n, dt_rank: r } = *cfg;
    let direction = dense(w, r + 2 * n, (1, 1), sites, false)
        + dense(r, w, (1, 1), sites, true)
        + Cost { params: u(w * n + w), macs: u(sites * w * (4 * n + 1)) };
    dense(w, 2 * w, (1, 1), sites, false) + direction_sum(direction) + norm(w) + dense(w, w, (1, 1), sites, false)
}

fn direction_sum(one: Cost) -> Cost {
    (0..Ss2dConfig::DIRECTIONS).map(|_| one).sum()
}

fn conv_mixer(cfg: &BlockConfig, sites: usize) -> Result<Cost> {
    let g = cfg.group_sizes()?;
    let band = cfg.band_kernel;
    let tall = (band.1, band.0);
    Ok(match cfg.conv_mixer {
        ConvMixerKind::Band | ConvMixerKind::Strip => {
            depthwise(g[0], cfg.square_kernel, sites) + depthwise(g[1], band, sites) + depthwise(g[1], tall, sites)
        }
        ConvMixerKind::Dw3x3 => depthwise(g[0], cfg.square_kernel, sites),
        ConvMixerKind::InceptionDw => {
            depthwise(g[0], cfg.square_kernel, sites) + depthwise(g[1], band, sites) + depthwise(g[2], tall, sites)
        }
    })
}

fn global_mixer(cfg: &BlockConfig, sites: usize) -> Result<Cost> {
    let Some(ss) = cfg.ss2d_config()? else {
        return Ok(Cost::default());
    };
    let core = ss2d(&ss, sites);
    Ok(match cfg.global_mixer {
        GlobalMixerKind::Bottleneck => {
            let (c, w) = (cfg.channels, ss.channels);
            dense(c, w, (1, 1), sites, true) + core + dense(w, c, (1, 1), sites, true)
        }
        _ => core,
    })
}

fn mlp(cfg: &BlockConfig, sites: usize) -> Cost {
    let h = cfg.mlp_hidden();
    dense(cfg.channels, h, (1, 1), sites, true) + dense(h, cfg.channels, (1, 1), sites, true)
}

/// Per-module cost rows of `cfg` at a square input of side `resolution`.
pub fn analyze(cfg: &ModelConfig, resolution: usize) -> Result<CostReport> {
    cfg.validate()?;
    let extents = cfg.stage_extents(resolution)?;
    let mut rows = Vec::new();
    let mut push = |module: String, c: Cost| rows.push(CostRow { module, params: c.params, macs: c.macs });

    let d0 = cfg.stages[0].embed_dim;
    let stem = match cfg.stem {
        StemKind::Standard => {
            let s1 = (resolution / 2).pow(2);
            let s2 = (resolution / 4).pow(2);
            dense(cfg.in_channels, d0 / 2, (3, 3), s1, false) + norm(d0 / 2) + dense(d0 / 2, d0, (3, 3), s2, false) + norm(d0)
        }
        StemKind::Single => dense(cfg.in_channels, d0, (3, 3), (resolution / 2).pow(2), false) + norm(d0),
    };
    push(String::from("stem"), stem);

    for (i, (stage, &ext)) in cfg.stages.iter().zip(&extents).enumerate() {
        let sites = ext * ext;
        if i > 0 {
            let prev = cfg.stages[i - 1].embed_dim;
            push(format!("stages.{i}.downsample"), dense(prev, stage.embed_dim, (3, 3), sites, false) + norm(stage.embed_dim));
        }
        let b = &stage.block;
        let parts = [
            ("conv_mixer", conv_mixer(b, sites)?),
            ("global_mixer", global_mixer(b, sites)?),
            ("norm", norm(b.channels)),
            ("mlp", mlp(b, sites)),
        ];
        for j in 0..stage.num_blocks {
            for (name, c) in parts {
                if c.params > 0 {
                    push(format!("stages.{i}.blocks.{j}.{name}"), c);
                }
            }
        }
    }

    let last = cfg.stages[cfg.stages.len() - 1].embed_dim;
    let hidden = cfg.head_hidden();
    push(String::from("head"), linear(last, hidden) + norm(hidden) + linear(hidden, cfg.num_classes));

    let total_params = rows.iter().map(|r| r.params).sum();
    let total_macs = rows.iter().map(|r| r.macs).sum();
    Ok(CostReport {
        model: cfg.name.clone(),
        resolution,
        state_dim: cfg.stages[0].block.ssm.state_dim,
        rows,
        total_params,
        total_macs,
    })
}

/// Total parameter count; independent of resolution.
pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    Ok(analyze(cfg, cfg.total_stride())?.total_params)
}

/// Total MACs of one image at `resolution` x `resolution`.
pub fn count_macs(cfg: &ModelConfig, resolution: usize) -> Result<u64> {
    Ok(analyze(cfg, resolution)?.total_macs)
}

/// Closed-form count next to the element count of declared weight tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationCheck {
    pub closed_form: u64,
    pub enumerated: u64,
}

impl EnumerationCheck {
    pub fn matches(&self) -> bool {
        self.closed_form == self.enumerated
    }
}

/// Compares the closed form against an explicit list of declared tensors.
pub fn check_enumeration(cfg: &ModelConfig, specs: &ParamSpecs) -> Result<EnumerationCheck> {
    Ok(EnumerationCheck { closed_form: count_params(cfg)?, enumerated: u(specs.total_numel()) })
}

/// Compares the closed form against the tensors the model would instantiate.
pub fn verify_against_enumeration(cfg: &ModelConfig) -> Result<EnumerationCheck> {
    check_enumeration(cfg, &Architecture::new(cfg)?.specs)
}

impl CostReport {
    /// Sum of rows whose module path starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> (u64, u64) {
        self.rows
            .iter()
            .filter(|r| r.module.starts_with(prefix))
            .fold((0, 0), |(p, m), r| (p + r.params, m + r.macs))
    }

    /// Rows collapsed to the first `depth` path components, in first-seen order.
    pub fn grouped(&self, depth: usize) -> Vec<CostRow> {
        let mut out: Vec<CostRow> = Vec::new();
        for r in &self.rows {
            let key: String = r.module.split('.').take(depth).collect::<Vec<_>>().join(".");
            match out.iter_mut().find(|o| o.module == key) {
                Some(o) => {
                    o.params += r.params;
                    o.macs += r.macs;
                }
                None => out.push(CostRow { module: key, params: r.params, macs: r.macs }),
            }
        }
        out
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "model {} at {r}x{r}, SS2D state dim {} (default {DEFAULT_STATE_DIM}), dt rank ceil(width/16)",
            self.model,
            self.state_dim,
            r = self.resolution
        )?;
        let rows = self.grouped(2);
        let width = rows.iter().map(|r| r.module.len()).max().unwrap_or(6).max(6);
        writeln!(f, "{:<width$}  {:>14}  {:>16}", "module", "params", "macs")?;
        for r in &rows {
            writeln!(f, "{:<width$}  {:>14}  {:>16}", r.module, r.params, r.macs)?;
        }
        writeln!(f, "{:<width$}  {:>14}  {:>16}", "total", self.total_params, self.total_macs)?;
        write!(
            f,
            "total {:.2}M params, {:.2}G MACs",
            self.total_params as f64 / 1e6,
            self.total_macs as f64 / 1e9
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_row_sums() {
        let r = analyze(&ModelConfig::preset("T").unwrap(), 224).unwrap();
        assert_eq!(r.total_params, r.rows.iter().map(|r| r.params).sum::<u64>());
        assert_eq!(r.grouped(1).iter().map(|r| r.macs).sum::<u64>(), r.total_macs);
    }

    #[test]
    fn params_do_not_depend_on_resolution() {
        let cfg = ModelConfig::preset("S").unwrap();
        assert_eq!(analyze(&cfg, 224).unwrap().total_params, analyze(&cfg, 64).unwrap().total_params);
    }

    #[test]
    fn ss2d_closed_form_by_hand() {
        // w = 36, N = 8, R = 3
        let cfg = Ss2dConfig::new(36, 8, None).unwrap();
        let per_dir = 19 * 36 + (3 * 36 + 36) + 36 * 8 + 36;
        assert_eq!(ss2d(&cfg, 1).params, (2 * 36 * 36 + 4 * per_dir + 72 + 36 * 36) as u64);
    }

    #[test]
    fn rejects_bad_resolution() {
        assert!(analyze(&ModelConfig::preset("T").unwrap(), 100).is_err());
    }
}
