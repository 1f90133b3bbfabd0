//! Full network assembly: stem, four stages separated by downsampling
//! layers, and the classifier.

mod config;
mod cost;

pub use config::{ModelConfig, OUTPUT_STRIDE};
pub use cost::{analyze, analyze_model, CostReport, LayerCost, LayerKind};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{se_reduction, Classifier, DownsampleLayer, RepVitBlock, Stem};
use crate::error::{Error, Result};
use crate::params::{join, ParamKind, ParamMut, ParamRef, Parameterized};
use crate::tensor::Tensor;

/// Train form keeps every branch and batch norm; fused form has each
/// re-parameterizable layer collapsed and every batch norm folded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Train,
    Fused,
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Form::Train => "train",
            Form::Fused => "fused",
        })
    }
}

impl FromStr for Form {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Form::Train),
            "fused" => Ok(Form::Fused),
            other => Err(Error::config(
                "form",
                format!("expected train|fused, got `{other}`"),
            )),
        }
    }
}

/// Weight initialization for a freshly built model. Batch norms always start
/// as identity (gamma 1, beta 0, mean 0, var 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zero,
    Constant(f32),
    /// Uniform in `[-0.1, 0.1)` drawn in canonical parameter order.
    SeededUniform(u64),
}

pub const INIT_RANGE: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    /// Present on every stage but the first.
    pub downsample: Option<DownsampleLayer>,
    pub blocks: Vec<RepVitBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub stem: Stem,
    pub stages: Vec<Stage>,
    pub classifier: Classifier,
    form: Form,
}

/// Builds a train-form model for `cfg`.
pub fn build(cfg: &ModelConfig, init: Init) -> Result<Model> {
    let mut model = Model::skeleton(cfg)?;
    model.initialize(init);
    Ok(model)
}

impl Model {
    /// Structure only: zero weights, identity norms.
    fn skeleton(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = Stem::new(cfg.stage_widths[0])?;
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let width = cfg.stage_widths[s];
            let downsample = match s {
                0 => None,
                _ => Some(DownsampleLayer::new(cfg.stage_widths[s - 1], width)?),
            };
            let blocks = (0..cfg.stage_depths[s])
                .map(|i| {
                    let se = ModelConfig::se_on_block(i).then(|| se_reduction(width));
                    RepVitBlock::new(width, se)
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { downsample, blocks });
        }
        Ok(Model {
            config: cfg.clone(),
            stem,
            stages,
            classifier: Classifier::new(cfg.stage_widths[3], cfg.num_classes),
            form: Form::Train,
        })
    }

    /// Zero-valued model of the given form, ready to receive loaded weights.
    pub(crate) fn empty(cfg: &ModelConfig, form: Form) -> Result<Self> {
        let mut m = Self::skeleton(cfg)?;
        if form == Form::Fused {
            m.set_form(true)?;
            m.params_mut("").into_iter().for_each(|p| p.data.fill(0.0));
        }
        Ok(m)
    }

    fn initialize(&mut self, init: Init) {
        let mut rng = match init {
            Init::SeededUniform(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        for p in self.params_mut("") {
            match p.kind {
                ParamKind::Weight | ParamKind::Bias => match (init, rng.as_mut()) {
                    (Init::Zero, _) => p.data.fill(0.0),
                    (Init::Constant(c), _) => p.data.fill(c),
                    (Init::SeededUniform(_), Some(rng)) => p
                        .data
                        .iter_mut()
                        .for_each(|v| *v = rng.gen_range(-INIT_RANGE..INIT_RANGE)),
                    (Init::SeededUniform(_), None) => unreachable!(),
                },
                ParamKind::BnGamma | ParamKind::BnVar => p.data.fill(1.0),
                ParamKind::BnBeta | ParamKind::BnMean => p.data.fill(0.0),
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Checks input dims before any compute.
    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != 3 {
            return Err(Error::shape(format!(
                "model expects 3 input channels, got {}",
                x.c()
            )));
        }
        if x.h() == 0
            || x.w() == 0
            || !x.h().is_multiple_of(OUTPUT_STRIDE)
            || !x.w().is_multiple_of(OUTPUT_STRIDE)
        {
            return Err(Error::shape(format!(
                "input resolution {}x{} is not a positive multiple of {OUTPUT_STRIDE}",
                x.h(),
                x.w()
            )));
        }
        Ok(())
    }

    /// Logits as `(N, classes, 1, 1)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_inspect(x, |_, _| {})
    }

    /// Forward pass that reports intermediate activations: `"stem"`,
    /// `"stage0"` … `"stage3"`, then `"logits"`.
    pub fn forward_inspect(
        &self,
        x: &Tensor,
        mut observe: impl FnMut(&str, &Tensor),
    ) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x)?;
        observe("stem", &h);
        for (s, stage) in self.stages.iter().enumerate() {
            if let Some(d) = &stage.downsample {
                h = d.forward(&h)?;
            }
            for b in &stage.blocks {
                h = b.forward(&h)?;
            }
            observe(&format!("stage{s}"), &h);
        }
        let logits = self.classifier.forward(&h)?;
        observe("logits", &logits);
        Ok(logits)
    }

    /// Switches to fused form. Conversion is one-way: asking for train form
    /// on a fused model, or fusing twice, is a state error.
    pub fn set_form(&mut self, fused: bool) -> Result<()> {
        match (self.form, fused) {
            (Form::Train, false) => Ok(()),
            (Form::Fused, true) => Err(Error::State("model is already fused".into())),
            (Form::Fused, false) => Err(Error::State(
                "fused models cannot be converted back to train form".into(),
            )),
            (Form::Train, true) => {
                let mut fused = self.clone();
                fused.fuse_all()?;
                fused.form = Form::Fused;
                *self = fused;
                Ok(())
            }
        }
    }

    /// Consuming variant of `set_form(true)`.
    pub fn into_fused(mut self) -> Result<Self> {
        self.set_form(true)?;
        Ok(self)
    }

    fn fuse_all(&mut self) -> Result<()> {
        self.stem.fuse()?;
        for stage in &mut self.stages {
            if let Some(d) = &mut stage.downsample {
                d.fuse()?;
            }
            for b in &mut stage.blocks {
                b.fuse()?;
            }
        }
        Ok(())
    }
}

impl Parameterized for Model {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.stem.collect_params(&join(prefix, "stem"), out);
        for (s, stage) in self.stages.iter().enumerate() {
            let sp = join(prefix, &format!("stages.{s}"));
            if let Some(d) = &stage.downsample {
                d.collect_params(&join(&sp, "downsample"), out);
            }
            for (i, b) in stage.blocks.iter().enumerate() {
                b.collect_params(&join(&sp, &format!("blocks.{i}")), out);
            }
        }
        self.classifier
            .collect_params(&join(prefix, "classifier"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.stem.collect_params_mut(&join(prefix, "stem"), out);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            let sp = join(prefix, &format!("stages.{s}"));
            if let Some(d) = &mut stage.downsample {
                d.collect_params_mut(&join(&sp, "downsample"), out);
            }
            for (i, b) in stage.blocks.iter_mut().enumerate() {
                b.collect_params_mut(&join(&sp, &format!("blocks.{i}")), out);
            }
        }
        self.classifier
            .collect_params_mut(&join(prefix, "classifier"), out);
    }
}

/// Indices of the `k` largest logits, ties broken by ascending index.
pub fn top_k(logits: &[f32], k: usize) -> Vec<(usize, f32)> {
    let mut idx: Vec<(usize, f32)> = logits.iter().copied().enumerate().collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.truncate(k);
    idx
}
