use serde::{Deserialize, Serialize};

use super::{build, Form, Init, Model, ModelConfig, OUTPUT_STRIDE};
use crate::blocks::{ChannelMixer, ConvBn, RepDwLayer, RepVitBlock, SeLayer};
use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::tensor::ConvSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Depthwise,
    Se,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    pub macs: u64,
    pub output_dims: [usize; 4],
}

/// Parameter and multiply-accumulate counts for one batch-1 forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub name: String,
    pub form: Form,
    pub resolution: usize,
    pub total_params: u64,
    pub total_macs: u64,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn params_millions(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    /// Human-readable table, one row per layer plus totals.
    pub fn to_table(&self) -> String {
        let width = self
            .layers
            .iter()
            .map(|l| l.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = format!(
            "{} ({} form) at {}x{}\n{:<width$}  {:>10}  {:>14}  {}\n",
            self.name,
            self.form,
            self.resolution,
            self.resolution,
            "layer",
            "params",
            "MACs",
            "output"
        );
        for l in &self.layers {
            let [n, c, h, w] = l.output_dims;
            s.push_str(&format!(
                "{:<width$}  {:>10}  {:>14}  {n}x{c}x{h}x{w}\n",
                l.name, l.params, l.macs
            ));
        }
        s.push_str(&format!(
            "{:<width$}  {:>10}  {:>14}\ntotal params: {:.3} M\ntotal MACs:   {:.3} G\n",
            "total",
            self.total_params,
            self.total_macs,
            self.params_millions(),
            self.gmacs()
        ));
        s
    }
}

/// Builds `cfg` in the requested form and counts its cost at
/// `resolution × resolution`.
pub fn analyze(cfg: &ModelConfig, resolution: usize, form: Form) -> Result<CostReport> {
    let mut model = build(cfg, Init::Zero)?;
    if form == Form::Fused {
        model.set_form(true)?;
    }
    analyze_model(&model, resolution)
}

/// Counts the cost of an already built model. Parameters come from the
/// model's actual tensors; batch norm contributes no MACs, and pooling,
/// activations and additions are free.
pub fn analyze_model(model: &Model, resolution: usize) -> Result<CostReport> {
    if resolution == 0 || !resolution.is_multiple_of(OUTPUT_STRIDE) {
        return Err(Error::config(
            "resolution",
            format!("{resolution} must be a positive multiple of {OUTPUT_STRIDE}"),
        ));
    }
    let mut walk = Walk::default();
    let mut dims = [1, 3, resolution, resolution];
    dims = walk.conv_bn("stem.conv1", &model.stem.conv1, dims)?;
    dims = walk.conv_bn("stem.conv2", &model.stem.conv2, dims)?;
    for (s, stage) in model.stages.iter().enumerate() {
        if let Some(d) = &stage.downsample {
            let p = format!("stages.{s}.downsample");
            dims = walk.block(&format!("{p}.pre_block"), &d.pre_block, dims)?;
            dims = walk.repdw(&format!("{p}.spatial_dw"), &d.spatial_dw, dims)?;
            dims = walk.conv_bn(&format!("{p}.channel_proj"), &d.channel_proj, dims)?;
            dims = walk.mixer(&format!("{p}.ffn"), &d.ffn, dims)?;
        }
        for (i, b) in stage.blocks.iter().enumerate() {
            dims = walk.block(&format!("stages.{s}.blocks.{i}"), b, dims)?;
        }
    }
    let c = &model.classifier;
    let features = dims[1];
    walk.push(
        "classifier",
        LayerKind::Linear,
        c.param_count(),
        features * c.num_classes * dims[0],
        [dims[0], c.num_classes, 1, 1],
    );

    let total_params = walk.layers.iter().map(|l| l.params).sum();
    let total_macs = walk.layers.iter().map(|l| l.macs).sum();
    Ok(CostReport {
        name: model.config().name.clone(),
        form: model.form(),
        resolution,
        total_params,
        total_macs,
        layers: walk.layers,
    })
}

#[derive(Default)]
struct Walk {
    layers: Vec<LayerCost>,
}

fn conv_macs(spec: &ConvSpec, out: [usize; 4]) -> usize {
    spec.kernel
        * spec.kernel
        * (spec.in_channels / spec.groups)
        * spec.out_channels
        * out[0]
        * out[2]
        * out[3]
}

impl Walk {
    fn push(&mut self, name: &str, kind: LayerKind, params: usize, macs: usize, dims: [usize; 4]) {
        self.layers.push(LayerCost {
            name: name.to_string(),
            kind,
            params: params as u64,
            macs: macs as u64,
            output_dims: dims,
        });
    }

    fn conv_bn(&mut self, name: &str, layer: &ConvBn, input: [usize; 4]) -> Result<[usize; 4]> {
        let spec = &layer.spec;
        let (h, w) = spec.output_hw(input[2], input[3])?;
        let out = [input[0], spec.out_channels, h, w];
        self.push(
            name,
            LayerKind::Conv,
            layer.param_count(),
            conv_macs(spec, out),
            out,
        );
        Ok(out)
    }

    fn repdw(&mut self, name: &str, layer: &RepDwLayer, input: [usize; 4]) -> Result<[usize; 4]> {
        let c = layer.channels();
        let spec3 = ConvSpec::depthwise(c, 3, layer.stride());
        let (h, w) = spec3.output_hw(input[2], input[3])?;
        let out = [input[0], c, h, w];
        let mut macs = conv_macs(&spec3, out);
        if layer.branches().is_some_and(|b| b.conv1x1.is_some()) {
            macs += conv_macs(&ConvSpec::depthwise(c, 1, layer.stride()), out);
        }
        self.push(name, LayerKind::Depthwise, layer.param_count(), macs, out);
        Ok(out)
    }

    fn se(&mut self, name: &str, se: &SeLayer, input: [usize; 4]) {
        let macs = 2 * se.channels * se.hidden() * input[0];
        self.push(name, LayerKind::Se, se.param_count(), macs, input);
    }

    fn mixer(&mut self, name: &str, m: &ChannelMixer, input: [usize; 4]) -> Result<[usize; 4]> {
        let h = self.conv_bn(&format!("{name}.expand"), &m.expand, input)?;
        self.conv_bn(&format!("{name}.project"), &m.project, h)
    }

    fn block(&mut self, name: &str, b: &RepVitBlock, input: [usize; 4]) -> Result<[usize; 4]> {
        let t = self.repdw(&format!("{name}.token_mixer"), &b.token_mixer, input)?;
        if let Some(se) = &b.se {
            self.se(&format!("{name}.se"), se, t);
        }
        self.mixer(&format!("{name}.channel_mixer"), &b.channel_mixer, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_closed_form() {
        let mut layer = ConvBn::new(ConvSpec::new(3, 8, 3, 1));
        layer.bias = Some(vec![0.0; 8]);
        layer.bn = None;
        let mut walk = Walk::default();
        let out = walk.conv_bn("c", &layer, [1, 3, 32, 32]).unwrap();
        assert_eq!(out, [1, 8, 32, 32]);
        assert_eq!(walk.layers[0].params, 8 * 3 * 9 + 8);
        assert_eq!(walk.layers[0].macs, 9 * 3 * 8 * 32 * 32);
    }

    #[test]
    fn totals_match_breakdown() {
        let r = analyze(&ModelConfig::m0_9(), 224, Form::Train).unwrap();
        assert_eq!(
            r.total_params,
            r.layers.iter().map(|l| l.params).sum::<u64>()
        );
        assert_eq!(r.total_macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
        let model = build(&ModelConfig::m0_9(), Init::Zero).unwrap();
        assert_eq!(r.total_params as usize, model.param_count());
    }

    #[test]
    fn bad_resolution_is_rejected() {
        assert!(analyze(&ModelConfig::m0_9(), 100, Form::Train).is_err());
    }
}
