//! Dense NCHW tensors and the numerical kernels every block is built from.

mod conv;
mod ops;
pub mod rvt;

pub use conv::{conv2d, ConvSpec};
pub use ops::{add, batch_norm_infer, gelu, global_avg_pool, linear, relu, sigmoid};
pub(crate) use ops::{
    add_assign, batch_norm_inplace, bias_add_inplace, bias_gelu_inplace, gelu_inplace,
    scale_channels,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default batch-norm epsilon for freshly built layers.
pub const BN_EPS: f32 = 1e-5;

/// A 4-D float tensor stored contiguously in NCHW order (W fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "tensor dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: [usize; 4], value: f32) -> Self {
        Tensor {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    /// Uniform samples in `[low, high)` from a ChaCha8 stream seeded with `seed`.
    pub fn random_uniform(dims: [usize; 4], low: f32, high: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.iter().product::<usize>())
            .map(|_| rng.gen_range(low..high))
            .collect();
        Tensor { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        let [_, cs, hs, ws] = self.dims;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    /// The `H·W` plane for sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    /// Same data viewed with new dims; element count must match.
    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest elementwise absolute difference; NaN if any pair differs by
    /// NaN. Panics if dims differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, |m: f32, d| {
                if d.is_nan() || m.is_nan() {
                    f32::NAN
                } else {
                    m.max(d)
                }
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Inference-mode batch-norm statistics for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl BnParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
        eps: f32,
    ) -> Result<Self> {
        let bn = BnParams {
            gamma,
            beta,
            running_mean,
            running_var,
            eps,
        };
        bn.validate()?;
        Ok(bn)
    }

    /// gamma=1, beta=0, mean=0, var=1.
    pub fn identity(channels: usize, eps: f32) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::shape(format!(
                "batch-norm vectors disagree in length: gamma {c}, beta {}, mean {}, var {}",
                self.beta.len(),
                self.running_mean.len(),
                self.running_var.len()
            )));
        }
        if self.eps < 0.0 || !self.eps.is_finite() {
            return Err(Error::Domain(format!(
                "batch-norm eps {} is invalid",
                self.eps
            )));
        }
        if let Some(v) = self.running_var.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::Domain(format!("negative running variance {v}")));
        }
        Ok(())
    }

    /// Per-channel `(scale, shift)` so that `bn(x) = x·scale + shift`.
    pub fn scale_shift(&self) -> Result<(Vec<f32>, Vec<f32>)> {
        self.validate()?;
        let mut scale = Vec::with_capacity(self.channels());
        let mut shift = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let denom = self.running_var[c] + self.eps;
            if denom.is_nan() || denom <= 0.0 {
                return Err(Error::Domain(format!(
                    "channel {c}: running_var + eps = {denom} is not positive"
                )));
            }
            let s = self.gamma[c] / denom.sqrt();
            scale.push(s);
            shift.push(self.beta[c] - self.running_mean[c] * s);
        }
        Ok((scale, shift))
    }
}
