//! Full backbones built from a [`ModelConfig`].

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::nn::{ConvNorm, Head, InceptionMambaBlock, ParamSpecs, ParamStore, PatchEmbed};
use crate::tensor::{Real, Tensor};
use crate::{config_err, shape_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub downsample: Option<ConvNorm>,
    pub blocks: Vec<InceptionMambaBlock>,
}

/// Layer structure of a model and the declarations of its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub stem: PatchEmbed,
    pub stages: Vec<Stage>,
    pub head: Head,
    pub specs: ParamSpecs,
}

impl Architecture {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let eps = cfg.norm_eps;
        let mut specs = ParamSpecs::new();
        let stem = PatchEmbed::new(&mut specs, "stem", cfg.stem, cfg.in_channels, cfg.stages[0].embed_dim, eps);
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for (i, sc) in cfg.stages.iter().enumerate() {
            let downsample = (i > 0).then(|| {
                let prev = cfg.stages[i - 1].embed_dim;
                ConvNorm::strided(&mut specs, &format!("stages.{i}.downsample"), prev, sc.embed_dim, eps)
            });
            let blocks = (0..sc.num_blocks)
                .map(|b| InceptionMambaBlock::new(&mut specs, &format!("stages.{i}.blocks.{b}"), &sc.block, eps))
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { downsample, blocks });
        }
        let last = cfg.stages[cfg.stages.len() - 1].embed_dim;
        let head = Head::new(&mut specs, "head", last, cfg.head_hidden(), cfg.num_classes, eps);
        Ok(Architecture { stem, stages, head, specs })
    }
}

/// Stage outputs and logits of one forward pass.
pub struct ForwardTrace {
    pub stages: Vec<Var>,
    pub logits: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(&config)?;
        let params = ParamStore::materialize(&arch.specs, seed)?;
        Ok(Model { config, arch, params })
    }

    /// Model with the given parameters, which must match the declarations.
    pub fn with_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let arch = Architecture::new(&config)?;
        let params = ParamStore::from_named(&arch.specs, params.into_named())?;
        Ok(Model { config, arch, params })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), arch: self.arch.clone(), params: self.params.cast() }
    }

    pub fn num_params(&self) -> usize {
        self.params.total_numel()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.nchw()?;
        if c != self.config.in_channels {
            return Err(shape_err!("model expects {} input channels, got {c}", self.config.in_channels));
        }
        let s = self.config.total_stride();
        if h % s != 0 || w % s != 0 {
            return Err(config_err!("input extents {h}x{w} must be multiples of {s}"));
        }
        Ok(())
    }

    /// Records the forward pass of `x` on `tape` with parameter handles `p`.
    pub fn trace(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<ForwardTrace> {
        self.check_input(tape.value(x))?;
        let mut h = self.arch.stem.forward(tape, p, x)?;
        let mut stages = Vec::with_capacity(self.arch.stages.len());
        for stage in &self.arch.stages {
            if let Some(ds) = &stage.downsample {
                h = ds.forward(tape, p, h)?;
            }
            for block in &stage.blocks {
                h = block.forward(tape, p, h)?;
            }
            stages.push(h);
        }
        let logits = self.arch.head.forward(tape, p, h)?;
        Ok(ForwardTrace { stages, logits })
    }

    /// Logits `[N, num_classes]` of a batch `[N, C, H, W]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (logits, _) = self.forward_with_stages(x)?;
        Ok(logits)
    }

    /// Logits together with the output of every stage.
    pub fn forward_with_stages(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape);
        let xv = tape.leaf(x.clone());
        let trace = self.trace(&mut tape, &p, xv)?;
        let stages = trace.stages.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((tape.value(trace.logits).clone(), stages))
    }

    /// Output of block `block` of stage `stage`.
    pub fn block_output(&self, x: &Tensor<T>, stage: usize, block: usize) -> Result<Tensor<T>> {
        let n_stages = self.arch.stages.len();
        let st = self
            .arch
            .stages
            .get(stage)
            .ok_or_else(|| config_err!("stage {stage} out of range (model has {n_stages})"))?;
        if block >= st.blocks.len() {
            return Err(config_err!("block {block} out of range (stage {stage} has {})", st.blocks.len()));
        }
        self.check_input(x)?;
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape);
        let mut h = tape.leaf(x.clone());
        h = self.arch.stem.forward(&mut tape, &p, h)?;
        for (i, s) in self.arch.stages.iter().enumerate() {
            if let Some(ds) = &s.downsample {
                h = ds.forward(&mut tape, &p, h)?;
            }
            for (j, b) in s.blocks.iter().enumerate() {
                h = b.forward(&mut tape, &p, h)?;
                if (i, j) == (stage, block) {
                    return Ok(tape.value(h).clone());
                }
            }
        }
        unreachable!("indices were checked")
    }

    /// Mean cross-entropy of a labelled batch and its gradient for every parameter.
    pub fn loss_and_grads(&self, x: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<Tensor<T>>, Tensor<T>)> {
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape);
        let xv = tape.leaf(x.clone());
        let trace = self.trace(&mut tape, &p, xv)?;
        let loss = tape.cross_entropy(trace.logits, labels)?;
        let mut grads = tape.backward(loss)?;
        let g = p
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros_like(tape.value(v))))
            .collect();
        Ok((tape.value(loss).item()?, g, tape.value(trace.logits).clone()))
    }
}
