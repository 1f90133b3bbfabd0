//! Structural re-parameterization: fold batch norm into convolutions and
//! collapse the branches of a [`RepDwLayer`] into one depthwise 3×3 conv.

use crate::blocks::{RepDwBranches, RepDwLayer};
use crate::error::{Error, Result};
use crate::tensor::{BnParams, ConvSpec, Tensor};

/// Inference-form depthwise convolution: weights `[C, 1, 3, 3]` plus bias `[C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedConv {
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

impl FusedConv {
    pub fn channels(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, x: &Tensor, stride: usize) -> Result<Tensor> {
        let spec = ConvSpec::depthwise(self.channels(), 3, stride);
        crate::tensor::conv2d(x, &self.weights, Some(&self.bias), &spec)
    }

    fn accumulate(&mut self, weights: &Tensor, bias: &[f32]) {
        self.weights
            .data_mut()
            .iter_mut()
            .zip(weights.data())
            .for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(bias).for_each(|(a, b)| *a += b);
    }
}

/// Folds `p` into the preceding convolution.
///
/// With `s = gamma / sqrt(var + eps)` per output channel, returns
/// `w' = w·s` and `b' = beta + (b − mean)·s`.
pub fn fuse_conv_bn(w: &Tensor, b: Option<&[f32]>, p: &BnParams) -> Result<(Tensor, Vec<f32>)> {
    let out_channels = w.dims()[0];
    if p.channels() != out_channels {
        return Err(Error::shape(format!(
            "batch norm has {} channels, conv has {out_channels} outputs",
            p.channels()
        )));
    }
    if let Some(b) = b {
        if b.len() != out_channels {
            return Err(Error::shape(format!(
                "bias length {} does not match {out_channels} outputs",
                b.len()
            )));
        }
    }
    let (scale, _) = p.scale_shift()?;
    let per_out = w.len().checked_div(out_channels).unwrap_or(0);
    let mut fused = w.clone();
    if per_out > 0 {
        for (o, filter) in fused.data_mut().chunks_mut(per_out).enumerate() {
            filter.iter_mut().for_each(|v| *v *= scale[o]);
        }
    }
    let bias = (0..out_channels)
        .map(|o| {
            let b0 = b.map_or(0.0, |b| b[o]);
            p.beta[o] + (b0 - p.running_mean[o]) * scale[o]
        })
        .collect();
    Ok((fused, bias))
}

/// Depthwise 3×3 kernel whose stride-1, pad-1 convolution is the identity.
pub fn identity_to_dw3x3(channels: usize) -> Tensor {
    let mut k = Tensor::zeros([channels, 1, 3, 3]);
    for c in 0..channels {
        k.data_mut()[c * 9 + 4] = 1.0;
    }
    k
}

/// Embeds a 1×1 kernel at the center of a zero 3×3 kernel.
pub fn pad_1x1_to_3x3(w: &Tensor) -> Result<Tensor> {
    let [o, i, kh, kw] = w.dims();
    if kh != 1 || kw != 1 {
        return Err(Error::shape(format!(
            "expected a 1x1 kernel, got {kh}x{kw}"
        )));
    }
    let mut k = Tensor::zeros([o, i, 3, 3]);
    for (idx, &v) in w.data().iter().enumerate() {
        k.data_mut()[idx * 9 + 4] = v;
    }
    Ok(k)
}

/// Fused kernel and bias contributed by each active branch, in the order
/// 3×3, 1×1, identity.
pub fn branch_terms(branches: &RepDwBranches, channels: usize) -> Result<Vec<(Tensor, Vec<f32>)>> {
    let mut terms = Vec::with_capacity(3);
    terms.push(fuse_conv_bn(
        &branches.conv3x3.weight,
        None,
        &branches.conv3x3.bn,
    )?);
    if let Some(b) = &branches.conv1x1 {
        let (w, bias) = fuse_conv_bn(&b.weight, None, &b.bn)?;
        terms.push((pad_1x1_to_3x3(&w)?, bias));
    }
    if let Some(bn) = &branches.identity {
        terms.push(fuse_conv_bn(&identity_to_dw3x3(channels), None, bn)?);
    }
    Ok(terms)
}

/// Sums a set of fused branch terms into one depthwise convolution.
pub fn merge_terms(channels: usize, terms: &[(Tensor, Vec<f32>)]) -> Result<FusedConv> {
    let mut fused = FusedConv {
        weights: Tensor::zeros([channels, 1, 3, 3]),
        bias: vec![0.0; channels],
    };
    for (w, b) in terms {
        if w.dims() != [channels, 1, 3, 3] || b.len() != channels {
            return Err(Error::shape(format!(
                "branch term {:?} does not fit a {channels}-channel depthwise 3x3",
                w.dims()
            )));
        }
        fused.accumulate(w, b);
    }
    Ok(fused)
}

/// Collapses a train-form layer into its single-conv equivalent. The layer
/// itself is left untouched; see [`RepDwLayer::fuse`] to install the result.
pub fn fuse_repdw(layer: &RepDwLayer) -> Result<FusedConv> {
    let branches = layer
        .branches()
        .ok_or_else(|| Error::State("depthwise layer is already fused".into()))?;
    if branches.identity.is_some() && layer.stride() != 1 {
        return Err(Error::State(
            "identity branch on a strided depthwise layer".into(),
        ));
    }
    let terms = branch_terms(branches, layer.channels())?;
    let fused = merge_terms(layer.channels(), &terms)?;
    debug_assert!(fused.weights.is_finite() && fused.bias.iter().all(|v| v.is_finite()));
    Ok(fused)
}
