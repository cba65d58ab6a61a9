//! Randomized verification drivers behind `scan-check` and `gradcheck`.

use std::fmt;

use imamba_core::autodiff::gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
use imamba_core::config::{BlockConfig, SsmSettings};
use imamba_core::nn::{InceptionMambaBlock, ParamSpecs, ParamStore};
use imamba_core::ssm::{causal_conv1d, scan_conv_kernel, scan_recurrent, SsmParams};
use imamba_core::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

pub const TOLERANCE_F32: f64 = 1e-5;
pub const TOLERANCE_F64: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanCheckConfig {
    pub seed: u64,
    pub trials: usize,
    pub max_len: usize,
    pub max_state: usize,
    /// Added to the first kernel tap of every system; nonzero values make
    /// the check fail on purpose.
    pub perturb: f64,
}

impl Default for ScanCheckConfig {
    fn default() -> Self {
        ScanCheckConfig { seed: 0, trials: 1000, max_len: 64, max_state: 16, perturb: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanCheckReport {
    pub trials: usize,
    pub max_diff_f32: f64,
    pub max_diff_f64: f64,
    /// Trial with the largest 32-bit difference.
    pub worst_trial: Option<usize>,
}

impl ScanCheckReport {
    pub fn passed(&self) -> bool {
        self.max_diff_f32 <= TOLERANCE_F32 && self.max_diff_f64 <= TOLERANCE_F64
    }
}

impl fmt::Display for ScanCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.trials == 0 {
            return write!(f, "warning: 0 trials, nothing was checked");
        }
        writeln!(f, "systems checked: {}", self.trials)?;
        writeln!(f, "max |recurrent - kernel| f32: {:.3e} (limit {TOLERANCE_F32:.0e})", self.max_diff_f32)?;
        write!(f, "max |recurrent - kernel| f64: {:.3e} (limit {TOLERANCE_F64:.0e})", self.max_diff_f64)?;
        if let Some(t) = self.worst_trial {
            write!(f, "\nworst f32 trial: {t}")?;
        }
        Ok(())
    }
}

/// One random time-invariant system and its input, in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomSystem {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub delta: f64,
    pub x: Vec<f64>,
}

impl RandomSystem {
    /// Stable system with `N <= max_state` and `L <= max_len`. Timescales are
    /// log-uniform so that some `|delta a|` fall below the series threshold.
    pub fn draw(rng: &mut impl Rng, max_len: usize, max_state: usize) -> Self {
        let n = rng.random_range(1..=max_state.max(1));
        let len = rng.random_range(1..=max_len.max(1));
        let mut vec = |lo: f64, hi: f64, k: usize| (0..k).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
        let a = vec(-2.0, -1e-3, n);
        let b = vec(-1.0, 1.0, n);
        let c = vec(-1.0, 1.0, n);
        let x = vec(-1.0, 1.0, len);
        let delta = f64::exp(rng.random_range(f64::ln(1e-3)..f64::ln(0.5)));
        RandomSystem { a, b, c, delta, x }
    }

    pub fn params<T: Real>(&self) -> Result<SsmParams<T>> {
        let cast = |v: &[f64]| v.iter().map(|&e| T::from_f64(e)).collect();
        Ok(SsmParams::time_invariant(cast(&self.a), cast(&self.b), cast(&self.c), T::from_f64(self.delta))?)
    }

    /// Largest `|recurrent - kernel|` over the sequence at precision `T`.
    pub fn max_diff<T: Real>(&self, perturb: f64) -> Result<f64> {
        let params = self.params::<T>()?;
        let x: Vec<T> = self.x.iter().map(|&e| T::from_f64(e)).collect();
        let rec = scan_recurrent(&params, &x)?;
        let mut kernel = scan_conv_kernel(&params, x.len())?;
        kernel[0] += T::from_f64(perturb);
        let conv = causal_conv1d(&kernel, &x)?;
        Ok(rec.iter().zip(&conv).map(|(&r, &c)| (r - c).abs().as_f64()).fold(0.0, f64::max))
    }
}

/// Recurrent scan against its convolution-kernel form over random systems.
pub fn scan_check(cfg: &ScanCheckConfig) -> Result<ScanCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = ScanCheckReport { trials: cfg.trials, max_diff_f32: 0.0, max_diff_f64: 0.0, worst_trial: None };
    for trial in 0..cfg.trials {
        let sys = RandomSystem::draw(&mut rng, cfg.max_len, cfg.max_state);
        let d32 = sys.max_diff::<f32>(cfg.perturb)?;
        let d64 = sys.max_diff::<f64>(cfg.perturb)?;
        if report.worst_trial.is_none() || d32 > report.max_diff_f32 {
            report.worst_trial = Some(trial);
            report.max_diff_f32 = d32;
        }
        report.max_diff_f64 = report.max_diff_f64.max(d64);
    }
    Ok(report)
}

/// Block used by the gradient check: 8 channels, state dim 4.
pub fn tiny_block_config() -> BlockConfig {
    BlockConfig { ssm: SsmSettings { state_dim: 4, dt_rank: None }, ..BlockConfig::new(8) }
}

/// Extents of the feature map fed to the checked block.
pub const TINY_SIDE: usize = 8;

/// Central differences on every parameter of one block, in double precision.
///
/// The loss is a fixed random projection of the block output on an 8x8 map,
/// so every output element contributes with a distinct weight.
pub fn block_gradcheck(block_cfg: &BlockConfig, seed: u64, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut specs = ParamSpecs::new();
    let block = InceptionMambaBlock::new(&mut specs, "block", block_cfg, 1e-6)?;
    let named = ParamStore::<f64>::materialize(&specs, seed)?.into_named();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let dims = [1, block_cfg.channels, TINY_SIDE, TINY_SIDE];
    let x = Tensor::from_fn(&dims, |_| rng.random_range(-1.0..1.0))?;
    let readout = Tensor::from_fn(&dims, |_| rng.random_range(-1.0..1.0))?;
    Ok(gradcheck(
        &named,
        |tape, p| {
            let xv = tape.leaf(x.clone());
            let rv = tape.leaf(readout.clone());
            let y = block.forward(tape, p, xv)?;
            let weighted = tape.mul(y, rv)?;
            Ok(tape.sum(weighted))
        },
        cfg,
    )?)
}
