use super::{ConvBn, RepDwLayer, SeLayer};
use crate::error::{Error, Result};
use crate::params::{join, ParamMut, ParamRef, Parameterized};
use crate::tensor::{gelu_inplace, ConvSpec, Tensor};

/// Hidden width of every channel mixer relative to its input.
pub const EXPANSION_RATIO: usize = 2;

/// Residual FFN: `x + BN(project(gelu(BN(expand(x)))))` with 1×1 convs.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMixer {
    pub expand: ConvBn,
    pub project: ConvBn,
}

impl ChannelMixer {
    pub fn new(channels: usize) -> Self {
        let hidden = channels * EXPANSION_RATIO;
        ChannelMixer {
            expand: ConvBn::new(ConvSpec::new(channels, hidden, 1, 1)),
            project: ConvBn::new(ConvSpec::new(hidden, channels, 1, 1)),
        }
    }

    pub fn channels(&self) -> usize {
        self.expand.spec.in_channels
    }

    /// The branch alone, without the residual.
    pub fn branch(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.expand.forward(x)?;
        gelu_inplace(&mut h);
        self.project.forward(&h)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.expand.forward_gelu(x)?;
        self.project.forward_add(&h, x)
    }

    pub(crate) fn fuse(&mut self) -> Result<()> {
        self.expand.fuse()?;
        self.project.fuse()
    }
}

impl Parameterized for ChannelMixer {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.expand.collect_params(&join(prefix, "expand"), out);
        self.project.collect_params(&join(prefix, "project"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.expand.collect_params_mut(&join(prefix, "expand"), out);
        self.project
            .collect_params_mut(&join(prefix, "project"), out);
    }
}

/// Token mixer (re-parameterizable depthwise 3×3, optional SE) followed by a
/// residual channel mixer.
#[derive(Clone, Debug, PartialEq)]
pub struct RepVitBlock {
    pub token_mixer: RepDwLayer,
    pub se: Option<SeLayer>,
    pub channel_mixer: ChannelMixer,
}

impl RepVitBlock {
    /// Zero-weight block with identity norms.
    pub fn new(channels: usize, se_reduction: Option<usize>) -> Result<Self> {
        Ok(RepVitBlock {
            token_mixer: RepDwLayer::zeros(channels, 1)?,
            se: se_reduction
                .map(|r| SeLayer::new(channels, r))
                .transpose()?,
            channel_mixer: ChannelMixer::new(channels),
        })
    }

    pub fn from_parts(
        token_mixer: RepDwLayer,
        se: Option<SeLayer>,
        channel_mixer: ChannelMixer,
    ) -> Result<Self> {
        let c = token_mixer.channels();
        if token_mixer.stride() != 1 {
            return Err(Error::shape("RepViT block token mixer must have stride 1"));
        }
        if se.as_ref().is_some_and(|s| s.channels != c) || channel_mixer.channels() != c {
            return Err(Error::shape(format!(
                "RepViT block parts disagree on channel count (token mixer {c})"
            )));
        }
        Ok(RepVitBlock {
            token_mixer,
            se,
            channel_mixer,
        })
    }

    pub fn channels(&self) -> usize {
        self.token_mixer.channels()
    }

    /// Output of the token mixer (and SE, when present).
    pub fn token_mix(&self, x: &Tensor) -> Result<Tensor> {
        let mut t = self.token_mixer.forward(x)?;
        if let Some(se) = &self.se {
            se.forward_inplace(&mut t)?;
        }
        Ok(t)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t = self.token_mix(x)?;
        self.channel_mixer.forward(&t)
    }

    pub(crate) fn fuse(&mut self) -> Result<()> {
        self.token_mixer.fuse()?;
        self.channel_mixer.fuse()
    }
}

impl Parameterized for RepVitBlock {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.token_mixer
            .collect_params(&join(prefix, "token_mixer"), out);
        if let Some(se) = &self.se {
            se.collect_params(&join(prefix, "se"), out);
        }
        self.channel_mixer
            .collect_params(&join(prefix, "channel_mixer"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.token_mixer
            .collect_params_mut(&join(prefix, "token_mixer"), out);
        if let Some(se) = &mut self.se {
            se.collect_params_mut(&join(prefix, "se"), out);
        }
        self.channel_mixer
            .collect_params_mut(&join(prefix, "channel_mixer"), out);
    }
}
