use super::{ChannelMixer, ConvBn, RepDwLayer, RepVitBlock};
use crate::error::{Error, Result};
use crate::params::{
    join, push_tensor, push_tensor_mut, push_vec, push_vec_mut, ParamKind, ParamMut, ParamRef,
    Parameterized,
};
use crate::tensor::{global_avg_pool, linear, ConvSpec, Tensor};

/// Two stride-2 3×3 convolutions (`3 → C/2 → C`), each followed by GeLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Stem {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
}

impl Stem {
    pub fn new(out_channels: usize) -> Result<Self> {
        if out_channels < 2 || !out_channels.is_multiple_of(2) {
            return Err(Error::shape(format!(
                "stem width must be even and at least 2, got {out_channels}"
            )));
        }
        let mid = out_channels / 2;
        Ok(Stem {
            conv1: ConvBn::new(ConvSpec::new(3, mid, 3, 2)),
            conv2: ConvBn::new(ConvSpec::new(mid, out_channels, 3, 2)),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.spec.out_channels
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.c() != 3 {
            return Err(Error::shape(format!(
                "stem expects 3 input channels, got {}",
                x.c()
            )));
        }
        let h = self.conv1.forward_gelu(x)?;
        self.conv2.forward_gelu(&h)
    }

    pub(crate) fn fuse(&mut self) -> Result<()> {
        self.conv1.fuse()?;
        self.conv2.fuse()
    }
}

impl Parameterized for Stem {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.conv1.collect_params(&join(prefix, "conv1"), out);
        self.conv2.collect_params(&join(prefix, "conv2"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.conv1.collect_params_mut(&join(prefix, "conv1"), out);
        self.conv2.collect_params_mut(&join(prefix, "conv2"), out);
    }
}

/// Between-stage downsampling: a RepViT block at the input width, a stride-2
/// depthwise conv, a 1×1 channel projection, then a residual FFN at the
/// output width.
#[derive(Clone, Debug, PartialEq)]
pub struct DownsampleLayer {
    pub pre_block: RepVitBlock,
    pub spatial_dw: RepDwLayer,
    pub channel_proj: ConvBn,
    pub ffn: ChannelMixer,
}

impl DownsampleLayer {
    pub fn new(in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(DownsampleLayer {
            pre_block: RepVitBlock::new(in_channels, None)?,
            spatial_dw: RepDwLayer::zeros(in_channels, 2)?,
            channel_proj: ConvBn::new(ConvSpec::new(in_channels, out_channels, 1, 1)),
            ffn: ChannelMixer::new(out_channels),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.spatial_dw.channels()
    }

    pub fn out_channels(&self) -> usize {
        self.channel_proj.spec.out_channels
    }

    /// Output of the strided path before the FFN.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        if x.h() < 2 || x.w() < 2 {
            return Err(Error::shape(format!(
                "downsampling needs H, W >= 2, got {}x{}",
                x.h(),
                x.w()
            )));
        }
        let t = self.pre_block.forward(x)?;
        let t = self.spatial_dw.forward(&t)?;
        self.channel_proj.forward(&t)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.project(x)?;
        self.ffn.forward(&z)
    }

    pub(crate) fn fuse(&mut self) -> Result<()> {
        self.pre_block.fuse()?;
        self.spatial_dw.fuse()?;
        self.channel_proj.fuse()?;
        self.ffn.fuse()
    }
}

impl Parameterized for DownsampleLayer {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.pre_block
            .collect_params(&join(prefix, "pre_block"), out);
        self.spatial_dw
            .collect_params(&join(prefix, "spatial_dw"), out);
        self.channel_proj
            .collect_params(&join(prefix, "channel_proj"), out);
        self.ffn.collect_params(&join(prefix, "ffn"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.pre_block
            .collect_params_mut(&join(prefix, "pre_block"), out);
        self.spatial_dw
            .collect_params_mut(&join(prefix, "spatial_dw"), out);
        self.channel_proj
            .collect_params_mut(&join(prefix, "channel_proj"), out);
        self.ffn.collect_params_mut(&join(prefix, "ffn"), out);
    }
}

/// Global average pooling followed by a single linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub num_classes: usize,
    /// `[classes, C]`
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl Classifier {
    pub fn new(in_channels: usize, num_classes: usize) -> Self {
        Classifier {
            num_classes,
            weight: Tensor::zeros([num_classes, in_channels, 1, 1]),
            bias: vec![0.0; num_classes],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    /// Logits as `(N, classes, 1, 1)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.c() != self.in_channels() {
            return Err(Error::shape(format!(
                "classifier expects {} channels, input axis C is {}",
                self.in_channels(),
                x.c()
            )));
        }
        linear(&global_avg_pool(x)?, &self.weight, Some(&self.bias))
    }
}

impl Parameterized for Classifier {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        let dims = vec![self.num_classes, self.in_channels()];
        push_tensor(out, prefix, "weight", ParamKind::Weight, dims, &self.weight);
        push_vec(out, prefix, "bias", ParamKind::Bias, &self.bias);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let dims = vec![self.num_classes, self.in_channels()];
        push_tensor_mut(
            out,
            prefix,
            "weight",
            ParamKind::Weight,
            dims,
            &mut self.weight,
        );
        push_vec_mut(out, prefix, "bias", ParamKind::Bias, &mut self.bias);
    }
}
