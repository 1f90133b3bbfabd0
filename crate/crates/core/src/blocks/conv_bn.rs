use crate::error::{Error, Result};
use crate::params::{
    push_tensor, push_tensor_mut, push_vec, push_vec_mut, ParamKind, ParamMut, ParamRef,
    Parameterized,
};
use crate::reparam::fuse_conv_bn;
use crate::tensor::{
    add_assign, batch_norm_inplace, bias_add_inplace, bias_gelu_inplace, conv2d, gelu_inplace,
    BnParams, ConvSpec, Tensor, BN_EPS,
};

/// A convolution followed by batch norm (train form), or a biased
/// convolution with the norm folded in (fused form).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
    pub bn: Option<BnParams>,
}

impl ConvBn {
    /// Zero weights and identity batch norm.
    pub fn new(spec: ConvSpec) -> Self {
        ConvBn {
            spec,
            weight: Tensor::zeros(spec.weight_dims()),
            bias: None,
            bn: Some(BnParams::identity(spec.out_channels, BN_EPS)),
        }
    }

    pub fn is_fused(&self) -> bool {
        self.bn.is_none()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = conv2d(x, &self.weight, self.bias.as_deref(), &self.spec)?;
        if let Some(bn) = &self.bn {
            batch_norm_inplace(&mut y, bn)?;
        }
        Ok(y)
    }

    /// `gelu(forward(x))`. In fused form the bias and activation share one pass.
    pub fn forward_gelu(&self, x: &Tensor) -> Result<Tensor> {
        if let (None, Some(b)) = (&self.bn, &self.bias) {
            let mut y = conv2d(x, &self.weight, None, &self.spec)?;
            bias_gelu_inplace(&mut y, b);
            return Ok(y);
        }
        let mut y = self.forward(x)?;
        gelu_inplace(&mut y);
        Ok(y)
    }

    /// `forward(x) + residual`. In fused form the bias and sum share one pass.
    pub fn forward_add(&self, x: &Tensor, residual: &Tensor) -> Result<Tensor> {
        if let (None, Some(b)) = (&self.bn, &self.bias) {
            let mut y = conv2d(x, &self.weight, None, &self.spec)?;
            bias_add_inplace(&mut y, b, residual)?;
            return Ok(y);
        }
        let mut y = self.forward(x)?;
        add_assign(&mut y, residual)?;
        Ok(y)
    }

    pub fn fuse(&mut self) -> Result<()> {
        let bn = self
            .bn
            .as_ref()
            .ok_or_else(|| Error::State("conv has no batch norm left to fold".into()))?;
        let (w, b) = fuse_conv_bn(&self.weight, self.bias.as_deref(), bn)?;
        self.weight = w;
        self.bias = Some(b);
        self.bn = None;
        Ok(())
    }
}

impl Parameterized for ConvBn {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        let dims = self.weight.dims().to_vec();
        push_tensor(out, prefix, "weight", ParamKind::Weight, dims, &self.weight);
        if let Some(b) = &self.bias {
            push_vec(out, prefix, "bias", ParamKind::Bias, b);
        }
        if let Some(bn) = &self.bn {
            bn.collect_params(&crate::params::join(prefix, "bn"), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let dims = self.weight.dims().to_vec();
        push_tensor_mut(
            out,
            prefix,
            "weight",
            ParamKind::Weight,
            dims,
            &mut self.weight,
        );
        if let Some(b) = &mut self.bias {
            push_vec_mut(out, prefix, "bias", ParamKind::Bias, b);
        }
        if let Some(bn) = &mut self.bn {
            bn.collect_params_mut(&crate::params::join(prefix, "bn"), out);
        }
    }
}
