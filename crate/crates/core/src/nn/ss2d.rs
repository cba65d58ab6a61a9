//! Four-direction selective-scan layer.
//!
//! ```text
//! [x, z] = in_proj(x)
//! x      = silu(x)
//! y      = sum over directions of scan_dir(x)      (fixed merge order)
//! out    = out_proj(norm(y) * silu(z))
//! ```
//!
//! Each direction owns its projections: `x_proj` produces the low-rank
//! timescale input together with per-site `B` and `C`, `dt_proj` lifts the
//! timescale back to full width, and a softplus keeps it positive.

use alloc::format;

use super::layers::{Conv, Norm};
use super::params::{Init, ParamId, ParamSpecs};
use crate::autodiff::{Tape, Var};
use crate::ssm::{Direction, Ss2dConfig};
use crate::tensor::Real;
use crate::{shape_err, Result};

const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 1e-1;

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionParams {
    pub x_proj: Conv,
    pub dt_proj: Conv,
    /// `[d, N]`; the state matrix is `-exp(a_log)`.
    pub a_log: ParamId,
    pub d_skip: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ss2d {
    pub cfg: Ss2dConfig,
    pub in_proj: Conv,
    pub directions: [DirectionParams; 4],
    pub norm: Norm,
    pub out_proj: Conv,
}

impl Ss2d {
    pub fn new(specs: &mut ParamSpecs, prefix: &str, cfg: Ss2dConfig, eps: f64) -> Self {
        let d = cfg.channels;
        let in_proj = Conv::pointwise(specs, &format!("{prefix}.in_proj"), d, 2 * d, false);
        let directions = Direction::ALL.map(|dir| {
            let p = format!("{prefix}.{}", dir.name());
            let x_proj = Conv::pointwise(specs, &format!("{p}.x_proj"), d, cfg.proj_rows(), false);
            let mut dt_proj = Conv::pointwise(specs, &format!("{p}.dt_proj"), cfg.dt_rank, d, false);
            dt_proj.bias = Some(specs.declare(format!("{p}.dt_proj.bias"), &[d], Init::DtBias { min: DT_MIN, max: DT_MAX }));
            DirectionParams {
                x_proj,
                dt_proj,
                a_log: specs.declare(format!("{p}.a_log"), &[d, cfg.state_dim], Init::ALog),
                d_skip: specs.declare(format!("{p}.d"), &[d], Init::Ones),
            }
        });
        Ss2d {
            cfg,
            in_proj,
            directions,
            norm: Norm::new(specs, &format!("{prefix}.norm"), d, eps),
            out_proj: Conv::pointwise(specs, &format!("{prefix}.out_proj"), d, d, false),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        self.forward_directions(tape, p, x, &Direction::ALL)
    }

    /// Runs only the listed directions; the others contribute nothing to the merge.
    pub fn forward_directions<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: Var,
        active: &[Direction],
    ) -> Result<Var> {
        let d = self.cfg.channels;
        let c = tape.value(x).nchw()?.1;
        if c != d {
            return Err(shape_err!("SS2D of width {d} got {c} input channels"));
        }
        let xz = self.in_proj.forward(tape, p, x)?;
        let xs = tape.slice_channels(xz, 0, d)?;
        let z = tape.slice_channels(xz, d, d)?;
        let xs = tape.silu(xs);

        let mut merged: Option<Var> = None;
        for dir in Direction::ALL.into_iter().filter(|d| active.contains(d)) {
            let y = self.scan_direction(tape, p, xs, dir)?;
            merged = Some(match merged {
                Some(acc) => tape.add(acc, y)?,
                None => y,
            });
        }
        let merged = match merged {
            Some(m) => m,
            None => tape.scale(xs, T::zero()),
        };
        let y = self.norm.forward(tape, p, merged)?;
        let gate = tape.silu(z);
        let y = tape.mul(y, gate)?;
        self.out_proj.forward(tape, p, y)
    }

    fn scan_direction<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], xs: Var, dir: Direction) -> Result<Var> {
        let Ss2dConfig { channels: _, state_dim: n, dt_rank: r } = self.cfg;
        let dp = &self.directions[dir.index()];
        let proj = dp.x_proj.forward(tape, p, xs)?;
        let dt_low = tape.slice_channels(proj, 0, r)?;
        let b = tape.slice_channels(proj, r, n)?;
        let c = tape.slice_channels(proj, r + n, n)?;
        let dt = dp.dt_proj.forward(tape, p, dt_low)?;
        let delta = tape.softplus(dt);
        let a = tape.exp(dp.a_log.var(p));
        let a = tape.scale(a, -T::one());
        tape.selective_scan(xs, delta, a, b, c, dp.d_skip.var(p), dir)
    }
}
