//! Forward latency of model variants, for relative comparison only.

use std::fmt;
use std::time::{Duration, Instant};

use imamba_core::config::ModelConfig;
use imamba_core::model::Model;
use imamba_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// Variants timed when none are named: the Tiny preset and its ablations.
pub const DEFAULT_VARIANTS: [&str; 6] =
    ["T", "T-no-globalmixer", "T-plain-ss2d", "T-strip-conv", "T-dw3x3", "T-inception-dw"];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub variant: String,
    pub mean: Duration,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub resolution: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Variant names from fastest to slowest.
    pub fn ordering(&self) -> Vec<&str> {
        let mut rows: Vec<&BenchRow> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.mean);
        rows.into_iter().map(|r| r.variant.as_str()).collect()
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fastest = self.rows.iter().map(|r| r.mean).min().unwrap_or_default().as_secs_f64();
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
        writeln!(f, "batch 1 at {r}x{r}, mean of {} forward passes", self.repeats, r = self.resolution)?;
        writeln!(f, "{:<width$}  {:>12}  {:>8}  {:>10}", "variant", "mean_ms", "relative", "GMACs")?;
        for r in &self.rows {
            let secs = r.mean.as_secs_f64();
            let rel = if fastest > 0.0 { secs / fastest } else { 1.0 };
            writeln!(
                f,
                "{:<width$}  {:>12.2}  {:>8.2}  {:>10.3}",
                r.variant,
                secs * 1e3,
                rel,
                r.macs as f64 / 1e9
            )?;
        }
        write!(f, "ordering (fastest first): {}", self.ordering().join(" < "))
    }
}

/// Times `repeats` forward passes of each variant on one random image,
/// after one untimed warm-up pass.
pub fn bench(variants: &[String], resolution: usize, repeats: usize, seed: u64) -> Result<BenchReport> {
    let configs = variants.iter().map(|v| ModelConfig::preset(v)).collect::<imamba_core::Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[1, 3, resolution, resolution], |_| rng.random_range(-1.0f32..1.0))?;
    let repeats = repeats.max(1);
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let macs = imamba_core::analyzer::count_macs(&cfg, resolution)?;
        let model = Model::<f32>::new(cfg, seed)?;
        model.forward(&x)?;
        let start = Instant::now();
        for _ in 0..repeats {
            model.forward(&x)?;
        }
        rows.push(BenchRow { variant: model.config.name.clone(), mean: start.elapsed() / repeats as u32, macs });
    }
    Ok(BenchReport { resolution, repeats, rows })
}
