//! Named, ordered views over every learnable tensor in a module tree.
//!
//! Checkpoints, initialization and cost accounting all walk parameters
//! through these views, so the order produced here is the canonical
//! on-disk order.

use crate::tensor::{BnParams, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
}

#[derive(Debug)]
pub struct ParamRef<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub data: &'a [f32],
}

#[derive(Debug)]
pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub data: &'a mut [f32],
}

pub trait Parameterized {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>);

    fn params(&self, prefix: &str) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.collect_params(prefix, &mut out);
        out
    }

    fn params_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_params_mut(prefix, &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.params("").iter().map(|p| p.data.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push_tensor<'a>(
    out: &mut Vec<ParamRef<'a>>,
    prefix: &str,
    name: &str,
    kind: ParamKind,
    dims: Vec<usize>,
    t: &'a Tensor,
) {
    out.push(ParamRef {
        name: join(prefix, name),
        kind,
        dims,
        data: t.data(),
    });
}

pub(crate) fn push_tensor_mut<'a>(
    out: &mut Vec<ParamMut<'a>>,
    prefix: &str,
    name: &str,
    kind: ParamKind,
    dims: Vec<usize>,
    t: &'a mut Tensor,
) {
    out.push(ParamMut {
        name: join(prefix, name),
        kind,
        dims,
        data: t.data_mut(),
    });
}

pub(crate) fn push_vec<'a>(
    out: &mut Vec<ParamRef<'a>>,
    prefix: &str,
    name: &str,
    kind: ParamKind,
    v: &'a [f32],
) {
    out.push(ParamRef {
        name: join(prefix, name),
        kind,
        dims: vec![v.len()],
        data: v,
    });
}

pub(crate) fn push_vec_mut<'a>(
    out: &mut Vec<ParamMut<'a>>,
    prefix: &str,
    name: &str,
    kind: ParamKind,
    v: &'a mut [f32],
) {
    out.push(ParamMut {
        name: join(prefix, name),
        kind,
        dims: vec![v.len()],
        data: v,
    });
}

impl Parameterized for BnParams {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push_vec(out, prefix, "gamma", ParamKind::BnGamma, &self.gamma);
        push_vec(out, prefix, "beta", ParamKind::BnBeta, &self.beta);
        push_vec(
            out,
            prefix,
            "running_mean",
            ParamKind::BnMean,
            &self.running_mean,
        );
        push_vec(
            out,
            prefix,
            "running_var",
            ParamKind::BnVar,
            &self.running_var,
        );
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push_vec_mut(out, prefix, "gamma", ParamKind::BnGamma, &mut self.gamma);
        push_vec_mut(out, prefix, "beta", ParamKind::BnBeta, &mut self.beta);
        push_vec_mut(
            out,
            prefix,
            "running_mean",
            ParamKind::BnMean,
            &mut self.running_mean,
        );
        push_vec_mut(
            out,
            prefix,
            "running_var",
            ParamKind::BnVar,
            &mut self.running_var,
        );
    }
}
