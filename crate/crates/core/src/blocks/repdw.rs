use crate::error::{Error, Result};
use crate::params::{
    join, push_tensor, push_tensor_mut, push_vec, push_vec_mut, ParamKind, ParamMut, ParamRef,
    Parameterized,
};
use crate::reparam::{fuse_repdw, FusedConv};
use crate::tensor::{add_assign, batch_norm_inplace, conv2d, BnParams, ConvSpec, Tensor, BN_EPS};

/// One depthwise conv branch with its own batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct DwBranch {
    pub weight: Tensor,
    pub bn: BnParams,
}

impl DwBranch {
    pub fn zeros(channels: usize, kernel: usize) -> Self {
        DwBranch {
            weight: Tensor::zeros([channels, 1, kernel, kernel]),
            bn: BnParams::identity(channels, BN_EPS),
        }
    }
}

/// Train-form branches of a re-parameterizable depthwise layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RepDwBranches {
    pub conv3x3: DwBranch,
    /// Optional 1×1 depthwise branch; unused by the shipped configs.
    pub conv1x1: Option<DwBranch>,
    /// Skip connection with its own batch norm; stride 1 only.
    pub identity: Option<BnParams>,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum RepDwForm {
    Train(RepDwBranches),
    Fused(FusedConv),
}

/// Depthwise 3×3 token mixer that trains as several parallel branches and
/// runs as a single convolution after [`RepDwLayer::fuse`].
#[derive(Clone, Debug, PartialEq)]
pub struct RepDwLayer {
    channels: usize,
    stride: usize,
    form: RepDwForm,
}

impl RepDwLayer {
    pub fn new(channels: usize, stride: usize, branches: RepDwBranches) -> Result<Self> {
        if stride != 1 && stride != 2 {
            return Err(Error::shape(format!(
                "depthwise stride must be 1 or 2, got {stride}"
            )));
        }
        if branches.identity.is_some() && stride != 1 {
            return Err(Error::shape("identity branch requires stride 1"));
        }
        if branches.conv3x3.weight.dims() != [channels, 1, 3, 3] {
            return Err(Error::shape(format!(
                "3x3 branch weight {:?}, expected [{channels}, 1, 3, 3]",
                branches.conv3x3.weight.dims()
            )));
        }
        if let Some(b) = &branches.conv1x1 {
            if b.weight.dims() != [channels, 1, 1, 1] {
                return Err(Error::shape(format!(
                    "1x1 branch weight {:?}, expected [{channels}, 1, 1, 1]",
                    b.weight.dims()
                )));
            }
        }
        let bns = std::iter::once(&branches.conv3x3.bn)
            .chain(branches.conv1x1.as_ref().map(|b| &b.bn))
            .chain(branches.identity.as_ref());
        for bn in bns {
            bn.validate()?;
            if bn.channels() != channels {
                return Err(Error::shape(format!(
                    "branch batch norm has {} channels, layer has {channels}",
                    bn.channels()
                )));
            }
        }
        Ok(RepDwLayer {
            channels,
            stride,
            form: RepDwForm::Train(branches),
        })
    }

    /// Zero 3×3 weights with identity norms; the skip branch is included
    /// whenever the stride allows it.
    pub fn zeros(channels: usize, stride: usize) -> Result<Self> {
        let branches = RepDwBranches {
            conv3x3: DwBranch::zeros(channels, 3),
            conv1x1: None,
            identity: (stride == 1).then(|| BnParams::identity(channels, BN_EPS)),
        };
        Self::new(channels, stride, branches)
    }

    pub fn from_fused(channels: usize, stride: usize, fused: FusedConv) -> Result<Self> {
        if fused.weights.dims() != [channels, 1, 3, 3] || fused.bias.len() != channels {
            return Err(Error::shape(format!(
                "fused conv {:?} does not match {channels} channels",
                fused.weights.dims()
            )));
        }
        Ok(RepDwLayer {
            channels,
            stride,
            form: RepDwForm::Fused(fused),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn form(&self) -> &RepDwForm {
        &self.form
    }

    pub fn is_fused(&self) -> bool {
        matches!(self.form, RepDwForm::Fused(_))
    }

    pub fn branches(&self) -> Option<&RepDwBranches> {
        match &self.form {
            RepDwForm::Train(b) => Some(b),
            RepDwForm::Fused(_) => None,
        }
    }

    pub fn branches_mut(&mut self) -> Option<&mut RepDwBranches> {
        match &mut self.form {
            RepDwForm::Train(b) => Some(b),
            RepDwForm::Fused(_) => None,
        }
    }

    pub fn fused(&self) -> Option<&FusedConv> {
        match &self.form {
            RepDwForm::Fused(f) => Some(f),
            RepDwForm::Train(_) => None,
        }
    }

    /// Runs whichever form is active.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match &self.form {
            RepDwForm::Train(b) => self.forward_branches(b, x),
            RepDwForm::Fused(f) => self.forward_single(f, x),
        }
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<Tensor> {
        let b = self
            .branches()
            .ok_or_else(|| Error::State("train-form branches requested on a fused layer".into()))?;
        self.forward_branches(b, x)
    }

    pub fn forward_fused(&self, x: &Tensor) -> Result<Tensor> {
        let f = self
            .fused()
            .ok_or_else(|| Error::State("fused form requested but layer is not fused".into()))?;
        self.forward_single(f, x)
    }

    /// Replaces the branches with their fused equivalent.
    pub fn fuse(&mut self) -> Result<()> {
        let fused = fuse_repdw(self)?;
        self.form = RepDwForm::Fused(fused);
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.channels {
            return Err(Error::shape(format!(
                "depthwise layer has {} channels, input axis C is {}",
                self.channels,
                x.c()
            )));
        }
        Ok(())
    }

    fn forward_branches(&self, b: &RepDwBranches, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let spec3 = ConvSpec::depthwise(self.channels, 3, self.stride);
        let mut y = conv2d(x, &b.conv3x3.weight, None, &spec3)?;
        batch_norm_inplace(&mut y, &b.conv3x3.bn)?;
        if let Some(b1) = &b.conv1x1 {
            let spec1 = ConvSpec::depthwise(self.channels, 1, self.stride);
            let mut z = conv2d(x, &b1.weight, None, &spec1)?;
            batch_norm_inplace(&mut z, &b1.bn)?;
            add_assign(&mut y, &z)?;
        }
        if let Some(bn) = &b.identity {
            let mut z = x.clone();
            batch_norm_inplace(&mut z, bn)?;
            add_assign(&mut y, &z)?;
        }
        Ok(y)
    }

    fn forward_single(&self, f: &FusedConv, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        f.forward(x, self.stride)
    }
}

impl Parameterized for RepDwLayer {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        match &self.form {
            RepDwForm::Train(b) => {
                let p3 = join(prefix, "conv3x3");
                let dims = b.conv3x3.weight.dims().to_vec();
                push_tensor(
                    out,
                    &p3,
                    "weight",
                    ParamKind::Weight,
                    dims,
                    &b.conv3x3.weight,
                );
                b.conv3x3.bn.collect_params(&join(&p3, "bn"), out);
                if let Some(b1) = &b.conv1x1 {
                    let p1 = join(prefix, "conv1x1");
                    let dims = b1.weight.dims().to_vec();
                    push_tensor(out, &p1, "weight", ParamKind::Weight, dims, &b1.weight);
                    b1.bn.collect_params(&join(&p1, "bn"), out);
                }
                if let Some(bn) = &b.identity {
                    bn.collect_params(&join(prefix, "identity.bn"), out);
                }
            }
            RepDwForm::Fused(f) => {
                let p = join(prefix, "fused");
                let dims = f.weights.dims().to_vec();
                push_tensor(out, &p, "weight", ParamKind::Weight, dims, &f.weights);
                push_vec(out, &p, "bias", ParamKind::Bias, &f.bias);
            }
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        match &mut self.form {
            RepDwForm::Train(b) => {
                let p3 = join(prefix, "conv3x3");
                let dims = b.conv3x3.weight.dims().to_vec();
                push_tensor_mut(
                    out,
                    &p3,
                    "weight",
                    ParamKind::Weight,
                    dims,
                    &mut b.conv3x3.weight,
                );
                b.conv3x3.bn.collect_params_mut(&join(&p3, "bn"), out);
                if let Some(b1) = &mut b.conv1x1 {
                    let p1 = join(prefix, "conv1x1");
                    let dims = b1.weight.dims().to_vec();
                    push_tensor_mut(out, &p1, "weight", ParamKind::Weight, dims, &mut b1.weight);
                    b1.bn.collect_params_mut(&join(&p1, "bn"), out);
                }
                if let Some(bn) = &mut b.identity {
                    bn.collect_params_mut(&join(prefix, "identity.bn"), out);
                }
            }
            RepDwForm::Fused(f) => {
                let p = join(prefix, "fused");
                let dims = f.weights.dims().to_vec();
                push_tensor_mut(out, &p, "weight", ParamKind::Weight, dims, &mut f.weights);
                push_vec_mut(out, &p, "bias", ParamKind::Bias, &mut f.bias);
            }
        }
    }
}
