//! Command-line verbs.
//!
//! Exit status: 0 on success, 1 when a verification fails (or on I/O and
//! numeric errors), 2 on usage errors such as unknown presets, invalid
//! configs or out-of-range indices.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use imamba_core::analyzer::{analyze, verify_against_enumeration};
use imamba_core::autodiff::gradcheck::GradcheckConfig;
use imamba_core::config::ModelConfig;
use imamba_core::model::Model;
use imamba_core::train::{generate_toy, AdamWConfig, TrainConfig};
use imamba_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checks::{block_gradcheck, scan_check, tiny_block_config, ScanCheckConfig};
use crate::{bench, features, imtn, parallel, weights, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "imamba", version, about = "InceptionMamba reference implementation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form parameter and MAC report.
    Analyze(AnalyzeArgs),
    /// Logits of a batch.
    Forward(ForwardArgs),
    /// Recurrent scan against its convolution-kernel form on random systems.
    ScanCheck(ScanCheckArgs),
    /// Central-difference gradient check of one small block.
    Gradcheck(GradcheckArgs),
    /// Trains the toy model on the synthetic dataset.
    TrainToy(TrainToyArgs),
    /// Writes per-channel grayscale images of one block's output.
    DumpFeatures(DumpFeaturesArgs),
    /// Relative forward latency of model variants.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Named preset, e.g. T, S, B, T-plain-ss2d or toy.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// JSON model config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ModelArgs {
    fn resolve(&self, default: &str) -> Result<ModelConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => weights::read_config(path),
            (None, Some(name)) => Ok(ModelConfig::preset(name)?),
            (None, None) => Ok(ModelConfig::preset(default)?),
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 224)]
    pub resolution: usize,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// IMTN tensor `[N, C, H, W]`; a seeded random batch when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// IMWT weights; seeded initialization when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

impl InputArgs {
    fn model(&self, cfg: ModelConfig) -> Result<Model<f32>> {
        match &self.weights {
            Some(path) => weights::load_weights(path, &cfg),
            None => Ok(Model::new(cfg, self.seed)?),
        }
    }

    fn tensor(&self, channels: usize) -> Result<Tensor<f32>> {
        if let Some(path) = &self.input {
            return imtn::read(path);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(1));
        let dims = [self.batch, channels, self.resolution, self.resolution];
        Ok(Tensor::from_fn(&dims, |_| rng.random_range(-1.0..1.0))?)
    }
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Writes the logits as an IMTN tensor.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[arg(long, default_value_t = 16)]
    pub max_state: usize,
    /// Offset added to the first kernel tap, to see the check fail.
    #[arg(long, default_value_t = 0.0)]
    pub perturb: f64,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, default_value = "toy")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Checkpoint directory: `config.json` plus one IMWT file per epoch.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpFeaturesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 0)]
    pub stage: usize,
    #[arg(long, default_value_t = 0)]
    pub block: usize,
    /// Batch element to dump.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Variant to time; repeatable. Defaults to T and its ablations.
    #[arg(long = "preset")]
    pub presets: Vec<String>,
    #[arg(long, default_value_t = 224)]
    pub resolution: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Outcome of a verb that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success,
    VerificationFailed,
}

impl Status {
    fn from_pass(passed: bool) -> Self {
        if passed {
            Status::Success
        } else {
            Status::VerificationFailed
        }
    }
}

pub const EXIT_SUCCESS: u8 = 0;
pub const EXIT_VERIFICATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Exit code of a finished run.
pub fn exit_code(result: &Result<Status>) -> u8 {
    match result {
        Ok(Status::Success) => EXIT_SUCCESS,
        Ok(Status::VerificationFailed) => EXIT_VERIFICATION,
        Err(e) if is_usage_error(e) => EXIT_USAGE,
        Err(_) => EXIT_VERIFICATION,
    }
}

fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Core(imamba_core::Error::Config(_) | imamba_core::Error::UnknownPreset(_)) | Error::Json(_)
    )
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Status> {
    match cli.command {
        Command::Analyze(a) => run_analyze(a, out),
        Command::Forward(a) => run_forward(a, out),
        Command::ScanCheck(a) => run_scan_check(a, out),
        Command::Gradcheck(a) => run_gradcheck(a, out),
        Command::TrainToy(a) => run_train_toy(a, out),
        Command::DumpFeatures(a) => run_dump_features(a, out),
        Command::Bench(a) => run_bench(a, out),
    }
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn run_analyze(a: AnalyzeArgs, out: &mut dyn Write) -> Result<Status> {
    let cfg = a.model.resolve("T")?;
    let report = analyze(&cfg, a.resolution)?;
    let check = verify_against_enumeration(&cfg)?;
    match a.format {
        Format::Text => {
            emit(out, &report)?;
            emit(
                out,
                format_args!(
                    "enumerated weight elements: {} ({})",
                    check.enumerated,
                    if check.matches() { "matches" } else { "MISMATCH" }
                ),
            )?;
        }
        Format::Json => {
            let mut doc = serde_json::to_value(&report)?;
            doc["enumerated_params"] = json!(check.enumerated);
            emit(out, serde_json::to_string_pretty(&doc)?)?;
        }
    }
    Ok(Status::from_pass(check.matches()))
}

fn run_forward(a: ForwardArgs, out: &mut dyn Write) -> Result<Status> {
    let cfg = a.model.resolve("toy")?;
    let model = a.input.model(cfg)?;
    let x = a.input.tensor(model.config.in_channels)?;
    let (logits, stages) = model.forward_with_stages(&x)?;
    emit(out, model.config.describe())?;
    emit(out, format_args!("input {}", x.shape()))?;
    for (i, s) in stages.iter().enumerate() {
        emit(out, format_args!("stage {i} {}", s.shape()))?;
    }
    let k = model.config.num_classes;
    for (n, row) in logits.data().chunks_exact(k).enumerate() {
        let (best, value) = row.iter().enumerate().fold((0, f32::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        emit(out, format_args!("sample {n}: class {best} logit {value:.6}"))?;
    }
    if let Some(path) = &a.output {
        imtn::write(path, &logits)?;
    }
    Ok(Status::from_pass(logits.all_finite()))
}

fn run_scan_check(a: ScanCheckArgs, out: &mut dyn Write) -> Result<Status> {
    let cfg = ScanCheckConfig {
        seed: a.seed,
        trials: a.trials,
        max_len: a.max_len,
        max_state: a.max_state,
        perturb: a.perturb,
    };
    let report = scan_check(&cfg)?;
    match a.format {
        Format::Text => {
            emit(out, &report)?;
            emit(out, if report.passed() { "PASS" } else { "FAIL" })?;
        }
        Format::Json => emit(
            out,
            json!({
                "trials": report.trials,
                "max_diff_f32": report.max_diff_f32,
                "max_diff_f64": report.max_diff_f64,
                "passed": report.passed(),
            }),
        )?,
    }
    Ok(Status::from_pass(report.passed()))
}

fn run_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<Status> {
    let cfg = GradcheckConfig { step: a.step, tolerance: a.tolerance, ..Default::default() };
    let report = block_gradcheck(&tiny_block_config(), a.seed, &cfg)?;
    match a.format {
        Format::Text => {
            write!(out, "{report}").map_err(|e| Error::io("<stdout>", e))?;
            emit(out, format_args!("max relative error {:.3e} (limit {:.0e})", report.max_rel_error(), a.tolerance))?;
            emit(out, if report.passed() { "PASS" } else { "FAIL" })?;
        }
        Format::Json => {
            let entries: Vec<_> = report
                .entries
                .iter()
                .map(|e| json!({ "parameter": e.name, "max_rel_error": e.max_rel_error, "passed": e.passed }))
                .collect();
            emit(out, json!({ "entries": entries, "passed": report.passed() }))?;
        }
    }
    Ok(Status::from_pass(report.passed()))
}

fn run_train_toy(a: TrainToyArgs, out: &mut dyn Write) -> Result<Status> {
    let cfg = ModelConfig::preset(&a.preset)?;
    let data = generate_toy(a.seed, a.samples)?;
    let mut model = Model::<f32>::new(cfg, a.seed)?;
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        optim: AdamWConfig { lr: a.lr, ..Default::default() },
        seed: a.seed,
        ..Default::default()
    };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        weights::write_config(dir.join("config.json"), &model.config)?;
    }
    emit(out, "epoch,loss,acc")?;
    let mut io_error = None;
    let threads = parallel::threads_from_env();
    parallel::train(&mut model, &data, &train_cfg, threads, |s, m| {
        let line = format!("{},{:.6},{:.4}", s.epoch, s.loss, s.accuracy);
        let saved = emit(out, line).and_then(|()| match &a.out {
            Some(dir) => weights::save_weights(checkpoint_path(dir, s.epoch), m),
            None => Ok(()),
        });
        if let Err(e) = saved {
            io_error = Some(e);
            return Err(imamba_core::Error::Config("checkpoint could not be written".into()));
        }
        Ok(())
    })
    .map_err(|e| io_error.take().unwrap_or(e))?;
    Ok(Status::Success)
}

/// Checkpoint file of `epoch` (1-based) inside `dir`.
pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.imwt"))
}

fn run_dump_features(a: DumpFeaturesArgs, out: &mut dyn Write) -> Result<Status> {
    let cfg = a.model.resolve("toy")?;
    let model = a.input.model(cfg)?;
    let x = a.input.tensor(model.config.in_channels)?;
    let n = x.nchw()?.0;
    if a.sample >= n {
        return Err(imamba_core::Error::Config(format!("sample {} out of range for batch of {n}", a.sample)).into());
    }
    let fmap = model.block_output(&x, a.stage, a.block)?;
    let written = features::dump(&fmap, a.sample, &a.out)?;
    let (_, c, h, w) = fmap.nchw()?;
    emit(
        out,
        format_args!(
            "stage {} block {}: {c} channels of {h}x{w}, {} files in {}",
            a.stage,
            a.block,
            written.len(),
            a.out.display()
        ),
    )?;
    Ok(Status::Success)
}

fn run_bench(a: BenchArgs, out: &mut dyn Write) -> Result<Status> {
    let variants: Vec<String> = if a.presets.is_empty() {
        bench::DEFAULT_VARIANTS.iter().map(|s| s.to_string()).collect()
    } else {
        a.presets
    };
    let report = bench::bench(&variants, a.resolution, a.repeats, a.seed)?;
    emit(out, report)?;
    Ok(Status::Success)
}
