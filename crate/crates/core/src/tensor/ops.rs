use super::{conv::sgemm, BnParams, Tensor};
use crate::error::{Error, Result};

/// Inference-mode batch norm: `gamma·(x − mean)/sqrt(var + eps) + beta` per channel.
pub fn batch_norm_infer(x: &Tensor, p: &BnParams) -> Result<Tensor> {
    let mut y = x.clone();
    batch_norm_inplace(&mut y, p)?;
    Ok(y)
}

pub(crate) fn batch_norm_inplace(x: &mut Tensor, p: &BnParams) -> Result<()> {
    if x.c() != p.channels() {
        return Err(Error::shape(format!(
            "batch norm has {} channels, input axis C is {}",
            p.channels(),
            x.c()
        )));
    }
    let (scale, _) = p.scale_shift()?;
    let c = x.c();
    let hw = x.h() * x.w();
    if hw == 0 {
        return Ok(());
    }
    for (i, plane) in x.data_mut().chunks_mut(hw).enumerate() {
        let ch = i % c;
        let (m, s, b) = (p.running_mean[ch], scale[ch], p.beta[ch]);
        plane.iter_mut().for_each(|v| *v = (*v - m) * s + b);
    }
    Ok(())
}

/// Exact (erf-based) GeLU.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub(crate) fn gelu_inplace(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = gelu_scalar(*v));
}

#[inline]
pub(crate) fn gelu_scalar(v: f32) -> f32 {
    0.5 * v * (1.0 + erf(v * std::f32::consts::FRAC_1_SQRT_2))
}

/// `erf(x)/x` in powers of `x²` on `[0, 1]`.
const ERF_SMALL: [f32; 7] = [
    std::f32::consts::FRAC_2_SQRT_PI,
    -0.37612626,
    0.112836,
    -0.026854444,
    0.0051895347,
    -0.00080208335,
    7.889091e-05,
];

/// `erfc(x)` in powers of `x - 2.5` on `[1, 4]`.
const ERFC_LARGE: [f32; 14] = [
    0.00040692312,
    -0.0021781097,
    0.005446991,
    -0.008352705,
    0.00861319,
    -0.006105772,
    0.0028229759,
    -0.0005654571,
    -0.0002913323,
    0.0002744003,
    -5.9677302e-05,
    -1.9106903e-05,
    8.748467e-06,
    -3.1419063e-07,
];

#[inline(always)]
fn poly7(c: &[f32; 7], t: f32) -> f32 {
    let t2 = t * t;
    let t4 = t2 * t2;
    let lo = (c[0] + c[1] * t) + (c[2] + c[3] * t) * t2;
    let hi = (c[4] + c[5] * t) + c[6] * t2;
    lo + hi * t4
}

#[inline(always)]
fn poly14(c: &[f32; 14], t: f32) -> f32 {
    let t2 = t * t;
    let t4 = t2 * t2;
    let t8 = t4 * t4;
    let p = |i: usize| c[i] + c[i + 1] * t;
    let a = (p(0) + p(2) * t2) + (p(4) + p(6) * t2) * t4;
    let b = (p(8) + p(10) * t2) + p(12) * t4;
    a + b * t8
}

/// Error function, within 2e-7 of the exact value. Both pieces are always
/// evaluated and selected, so loops over it vectorize.
#[inline]
pub(crate) fn erf(v: f32) -> f32 {
    let a = v.abs().min(4.0);
    // keeps the powers of x² normal; below 1e-4 the series is flat
    let t = a.max(1e-4);
    let small = a * poly7(&ERF_SMALL, t * t);
    let large = 1.0 - poly14(&ERFC_LARGE, a - 2.5);
    let r = if a < 1.0 { small } else { large };
    r.copysign(v)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

#[inline]
fn sigmoid_scalar(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn add(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let mut out = x.clone();
    add_assign(&mut out, y)?;
    Ok(out)
}

pub(crate) fn add_assign(x: &mut Tensor, y: &Tensor) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::shape(format!(
            "cannot add tensors with dims {:?} and {:?}",
            x.dims(),
            y.dims()
        )));
    }
    x.data_mut()
        .iter_mut()
        .zip(y.data())
        .for_each(|(a, b)| *a += b);
    Ok(())
}

/// `x[n,c] = gelu(x[n,c] + bias[c])` in a single pass.
pub(crate) fn bias_gelu_inplace(x: &mut Tensor, bias: &[f32]) {
    let hw = x.h() * x.w();
    if hw == 0 {
        return;
    }
    for (i, plane) in x.data_mut().chunks_mut(hw).enumerate() {
        let b = bias[i % bias.len()];
        plane.iter_mut().for_each(|v| *v = gelu_scalar(*v + b));
    }
}

/// `x[n,c] += bias[c] + r[n,c]` in a single pass.
pub(crate) fn bias_add_inplace(x: &mut Tensor, bias: &[f32], r: &Tensor) -> Result<()> {
    if x.dims() != r.dims() {
        return Err(Error::shape(format!(
            "cannot add tensors with dims {:?} and {:?}",
            x.dims(),
            r.dims()
        )));
    }
    let hw = x.h() * x.w();
    if hw == 0 {
        return Ok(());
    }
    for (i, (plane, res)) in x
        .data_mut()
        .chunks_mut(hw)
        .zip(r.data().chunks(hw))
        .enumerate()
    {
        let b = bias[i % bias.len()];
        plane.iter_mut().zip(res).for_each(|(v, r)| *v += b + r);
    }
    Ok(())
}

/// Multiplies each `(n, c)` plane by `gates[n·C + c]`.
pub(crate) fn scale_channels(x: &mut Tensor, gates: &[f32]) {
    let hw = x.h() * x.w();
    if hw == 0 {
        return;
    }
    for (plane, &g) in x.data_mut().chunks_mut(hw).zip(gates) {
        plane.iter_mut().for_each(|v| *v *= g);
    }
}

/// Mean over the spatial axes, producing `(N, C, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let hw = x.h() * x.w();
    if hw == 0 {
        return Err(Error::Domain(format!(
            "global average pool over empty spatial extent {}x{}",
            x.h(),
            x.w()
        )));
    }
    let data = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f32>() / hw as f32)
        .collect();
    Tensor::new([x.n(), x.c(), 1, 1], data)
}

/// Fully connected layer over flattened samples.
///
/// `x` is read as `[N, F]` with `F = C·H·W`; `w` holds `[O, F]` (trailing
/// unit dims allowed). Returns `(N, O, 1, 1)`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    let n = x.n();
    let features = x.c() * x.h() * x.w();
    let [outputs, wf, wh, ww] = w.dims();
    if wf * wh * ww != features {
        return Err(Error::shape(format!(
            "linear expects {} input features, got {features}",
            wf * wh * ww
        )));
    }
    if let Some(b) = bias {
        if b.len() != outputs {
            return Err(Error::shape(format!(
                "linear bias length {} does not match {outputs} outputs",
                b.len()
            )));
        }
    }
    let mut out = vec![0.0f32; n * outputs];
    if n > 0 && outputs > 0 && features > 0 {
        // out[N×O] = x[N×F] · wᵀ; transpose w into a dense [F×O] block.
        let mut wt = vec![0.0f32; features * outputs];
        for (o, row) in w.data().chunks(features).enumerate() {
            for (f, &v) in row.iter().enumerate() {
                wt[f * outputs + o] = v;
            }
        }
        sgemm(x.data(), &wt, &mut out, n, features, outputs);
    }
    if let Some(b) = bias {
        for row in out.chunks_mut(outputs.max(1)) {
            row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
        }
    }
    Tensor::new([n, outputs, 1, 1], out)
}
