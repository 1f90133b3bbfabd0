use crate::error::{Error, Result};
use crate::params::{
    join, push_tensor, push_tensor_mut, push_vec, push_vec_mut, ParamKind, ParamMut, ParamRef,
    Parameterized,
};
use crate::tensor::{global_avg_pool, linear, scale_channels, Tensor};

const DEFAULT_REDUCTION: usize = 4;

/// Reduction ratio used for an SE layer over `channels`: 4 when it divides
/// the width, otherwise the largest divisor of `channels` below 4.
pub fn se_reduction(channels: usize) -> usize {
    (1..=DEFAULT_REDUCTION)
        .rev()
        .find(|r| channels.is_multiple_of(*r))
        .unwrap_or(1)
}

/// Squeeze-and-excitation: pool, bottleneck MLP with ReLU, sigmoid gate.
#[derive(Clone, Debug, PartialEq)]
pub struct SeLayer {
    pub channels: usize,
    pub reduction: usize,
    /// `[C/r, C]`
    pub reduce_weight: Tensor,
    pub reduce_bias: Vec<f32>,
    /// `[C, C/r]`
    pub expand_weight: Tensor,
    pub expand_bias: Vec<f32>,
}

impl SeLayer {
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) || channels == 0 {
            return Err(Error::shape(format!(
                "SE reduction {reduction} must divide channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        Ok(SeLayer {
            channels,
            reduction,
            reduce_weight: Tensor::zeros([hidden, channels, 1, 1]),
            reduce_bias: vec![0.0; hidden],
            expand_weight: Tensor::zeros([channels, hidden, 1, 1]),
            expand_bias: vec![0.0; channels],
        })
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    /// Per `(n, c)` gate values in `(0, 1)`.
    pub fn gate(&self, x: &Tensor) -> Result<Vec<f32>> {
        if x.c() != self.channels {
            return Err(Error::shape(format!(
                "SE layer has {} channels, input axis C is {}",
                self.channels,
                x.c()
            )));
        }
        let pooled = global_avg_pool(x)?;
        let hidden =
            linear(&pooled, &self.reduce_weight, Some(&self.reduce_bias))?.map(|v| v.max(0.0));
        let logits = linear(&hidden, &self.expand_weight, Some(&self.expand_bias))?;
        Ok(logits
            .data()
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        self.forward_inplace(&mut y)?;
        Ok(y)
    }

    pub(crate) fn forward_inplace(&self, x: &mut Tensor) -> Result<()> {
        let gates = self.gate(x)?;
        scale_channels(x, &gates);
        Ok(())
    }
}

impl Parameterized for SeLayer {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        let (h, c) = (self.hidden(), self.channels);
        let p = join(prefix, "reduce");
        push_tensor(
            out,
            &p,
            "weight",
            ParamKind::Weight,
            vec![h, c],
            &self.reduce_weight,
        );
        push_vec(out, &p, "bias", ParamKind::Bias, &self.reduce_bias);
        let p = join(prefix, "expand");
        push_tensor(
            out,
            &p,
            "weight",
            ParamKind::Weight,
            vec![c, h],
            &self.expand_weight,
        );
        push_vec(out, &p, "bias", ParamKind::Bias, &self.expand_bias);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let (h, c) = (self.hidden(), self.channels);
        let p = join(prefix, "reduce");
        push_tensor_mut(
            out,
            &p,
            "weight",
            ParamKind::Weight,
            vec![h, c],
            &mut self.reduce_weight,
        );
        push_vec_mut(out, &p, "bias", ParamKind::Bias, &mut self.reduce_bias);
        let p = join(prefix, "expand");
        push_tensor_mut(
            out,
            &p,
            "weight",
            ParamKind::Weight,
            vec![c, h],
            &mut self.expand_weight,
        );
        push_vec_mut(out, &p, "bias", ParamKind::Bias, &mut self.expand_bias);
    }
}
