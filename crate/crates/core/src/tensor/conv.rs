use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Shape metadata for a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            groups: 1,
        }
    }

    /// Depthwise convolution: one filter per channel.
    pub fn depthwise(channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            groups: channels,
            ..Self::new(channels, channels, kernel, stride)
        }
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    /// Expected weight dims `[Cout, Cin/groups, k, k]`.
    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups.max(1),
            self.kernel,
            self.kernel,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::shape("groups must be at least 1"));
        }
        if !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::shape(format!(
                "channels (in {}, out {}) not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        if self.stride == 0 {
            return Err(Error::shape("stride must be at least 1"));
        }
        if self.kernel == 0 {
            return Err(Error::shape("kernel must be at least 1"));
        }
        Ok(())
    }

    /// Output `(H, W)` for an input of `(h, w)`, or a shape error if the
    /// padded input is smaller than the kernel.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |len: usize, axis: &str| {
            let padded = len + 2 * self.padding;
            if padded < self.kernel {
                Err(Error::shape(format!(
                    "axis {axis}: padded extent {padded} is smaller than kernel {}",
                    self.kernel
                )))
            } else {
                Ok((padded - self.kernel) / self.stride + 1)
            }
        };
        Ok((out(h, "H")?, out(w, "W")?))
    }
}

/// 2-D convolution with zero padding.
///
/// `w` has dims `[Cout, Cin/groups, k, k]`; `bias`, when given, has one entry
/// per output channel.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&[f32]>, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    if x.c() != spec.in_channels {
        return Err(Error::shape(format!(
            "input axis C is {} but conv expects {}",
            x.c(),
            spec.in_channels
        )));
    }
    let expected = spec.weight_dims();
    if w.dims() != expected {
        let axes = ["Cout", "Cin/groups", "kH", "kW"];
        let bad: Vec<String> = (0..4)
            .filter(|&i| w.dims()[i] != expected[i])
            .map(|i| format!("{} is {} (expected {})", axes[i], w.dims()[i], expected[i]))
            .collect();
        return Err(Error::shape(format!("conv weight {}", bad.join(", "))));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::shape(format!(
                "bias length {} does not match Cout {}",
                b.len(),
                spec.out_channels
            )));
        }
    }
    let (oh, ow) = spec.output_hw(x.h(), x.w())?;
    // kernels accumulate into `out`, so a bias is applied by prefilling it
    let mut out = Tensor::zeros([x.n(), spec.out_channels, oh, ow]);
    if let Some(b) = bias {
        fill_bias(&mut out, b);
    }
    if out.is_empty() || x.is_empty() {
        return Ok(out);
    }

    if spec.is_depthwise() {
        depthwise(x, w, spec, &mut out);
    } else if spec.kernel == 1 && spec.stride == 1 && spec.padding == 0 {
        pointwise(x, w, spec, &mut out);
    } else {
        im2col_gemm(x, w, spec, &mut out);
    }
    Ok(out)
}

fn fill_bias(out: &mut Tensor, bias: &[f32]) {
    let hw = out.h() * out.w();
    if hw == 0 {
        return;
    }
    for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        plane.fill(bias[i % bias.len()]);
    }
}

fn depthwise(x: &Tensor, w: &Tensor, spec: &ConvSpec, out: &mut Tensor) {
    let (h, wd) = (x.h(), x.w());
    let (oh, ow) = (out.h(), out.w());
    let c = spec.in_channels;
    let kk = spec.kernel * spec.kernel;
    let cols = tap_columns(spec, wd, ow);
    let kernels = w.data();
    let xd = x.data();
    // keep each task at a few thousand outputs
    let min_planes = (4096 / (oh * ow).max(1)).max(1);
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .with_min_len(min_planes)
        .enumerate()
        .for_each_init(
            || (Vec::new(), Vec::new()),
            |(pad, acc), (plane_idx, dst)| {
                let ch = plane_idx % c;
                let src = &xd[plane_idx * h * wd..(plane_idx + 1) * h * wd];
                let kernel = &kernels[ch * kk..(ch + 1) * kk];
                if spec.stride == 1 {
                    depthwise_plane_s1(src, h, wd, kernel, spec, dst, oh, ow, pad, acc);
                } else {
                    depthwise_plane(src, h, wd, kernel, spec, &cols, dst, ow);
                }
            },
        );
}

/// Stride-1 plane: copies the input into a zero-padded buffer, then runs one
/// contiguous axpy per tap over the flattened padded grid. Columns past `ow`
/// in each padded row are scratch and discarded.
#[allow(clippy::too_many_arguments)]
fn depthwise_plane_s1(
    src: &[f32],
    h: usize,
    w: usize,
    kernel: &[f32],
    spec: &ConvSpec,
    dst: &mut [f32],
    oh: usize,
    ow: usize,
    pad: &mut Vec<f32>,
    acc: &mut Vec<f32>,
) {
    let (k, p) = (spec.kernel, spec.padding);
    let pw = w + 2 * p;
    pad.clear();
    pad.resize((h + 2 * p) * pw, 0.0);
    for (y, row) in src.chunks(w).enumerate() {
        pad[(y + p) * pw + p..][..w].copy_from_slice(row);
    }
    let span = (oh - 1) * pw + ow;
    acc.clear();
    acc.resize(span, 0.0);
    for ky in 0..k {
        for kx in 0..k {
            let wv = kernel[ky * k + kx];
            let taps = &pad[ky * pw + kx..][..span];
            for (a, &v) in acc.iter_mut().zip(taps) {
                *a += wv * v;
            }
        }
    }
    for (oy, out_row) in dst.chunks_mut(ow).enumerate() {
        for (o, &a) in out_row.iter_mut().zip(&acc[oy * pw..oy * pw + ow]) {
            *o += a;
        }
    }
}

/// Valid output-column range `lo..hi` and first input column for each kernel
/// column `kx`, shared by every row and plane.
fn tap_columns(spec: &ConvSpec, w: usize, ow: usize) -> Vec<(usize, usize, usize)> {
    let s = spec.stride;
    let p = spec.padding as isize;
    (0..spec.kernel)
        .map(|kx| {
            let shift = kx as isize - p;
            // valid ox satisfy 0 <= ox*s + shift < w
            let lo = if shift < 0 {
                ((-shift) as usize).div_ceil(s)
            } else {
                0
            };
            let limit = w as isize - shift;
            let hi = if limit <= 0 {
                0
            } else {
                ((limit as usize - 1) / s + 1).min(ow)
            };
            if lo >= hi {
                return (0, 0, 0);
            }
            (lo, hi, ((lo * s) as isize + shift) as usize)
        })
        .collect()
}

/// Strided plane: taps are accumulated row by row over precomputed column
/// ranges.
#[allow(clippy::too_many_arguments)]
fn depthwise_plane(
    src: &[f32],
    h: usize,
    w: usize,
    kernel: &[f32],
    spec: &ConvSpec,
    cols: &[(usize, usize, usize)],
    dst: &mut [f32],
    ow: usize,
) {
    let k = spec.kernel;
    let s = spec.stride;
    let p = spec.padding;
    for (oy, out_row) in dst.chunks_mut(ow).enumerate() {
        for ky in 0..k {
            let iy = oy * s + ky;
            if iy < p || iy - p >= h {
                continue;
            }
            let in_row = &src[(iy - p) * w..(iy - p + 1) * w];
            for (kx, &(lo, hi, start)) in cols.iter().enumerate() {
                if lo >= hi {
                    continue;
                }
                let wv = kernel[ky * k + kx];
                let taps = in_row[start..].iter().step_by(s);
                for (o, &v) in out_row[lo..hi].iter_mut().zip(taps) {
                    *o += wv * v;
                }
            }
        }
    }
}

fn pointwise(x: &Tensor, w: &Tensor, spec: &ConvSpec, out: &mut Tensor) {
    let hw = x.h() * x.w();
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    for n in 0..x.n() {
        for g in 0..spec.groups {
            let in_start = (n * spec.in_channels + g * cin_g) * hw;
            let cols = &x.data()[in_start..in_start + cin_g * hw];
            let weights = &w.data()[g * cout_g * cin_g..(g + 1) * cout_g * cin_g];
            let out_start = (n * spec.out_channels + g * cout_g) * hw;
            let dst = &mut out.data_mut()[out_start..out_start + cout_g * hw];
            gemm_rows_parallel(weights, cols, dst, cout_g, cin_g, hw);
        }
    }
}

fn im2col_gemm(x: &Tensor, w: &Tensor, spec: &ConvSpec, out: &mut Tensor) {
    let (h, wd) = (x.h(), x.w());
    let (oh, ow) = (out.h(), out.w());
    let ohw = oh * ow;
    let k = spec.kernel;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let depth = cin_g * k * k;
    let mut cols = vec![0.0f32; depth * ohw];
    for n in 0..x.n() {
        for g in 0..spec.groups {
            cols.iter_mut().for_each(|v| *v = 0.0);
            for ci in 0..cin_g {
                let plane = x.plane(n, g * cin_g + ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let row = &mut cols[((ci * k + ky) * k + kx) * ohw..][..ohw];
                        for oy in 0..oh {
                            let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let in_row = &plane[iy as usize * wd..(iy as usize + 1) * wd];
                            for ox in 0..ow {
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if ix >= 0 && ix < wd as isize {
                                    row[oy * ow + ox] = in_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            let weights = &w.data()[g * cout_g * depth..(g + 1) * cout_g * depth];
            let out_start = (n * spec.out_channels + g * cout_g) * ohw;
            let dst = &mut out.data_mut()[out_start..out_start + cout_g * ohw];
            gemm_rows_parallel(weights, &cols, dst, cout_g, depth, ohw);
        }
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major, with rows of `c` split across
/// the current rayon pool.
fn gemm_rows_parallel(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    let threads = rayon::current_num_threads().max(1);
    let rows_per_chunk = m.div_ceil(threads).max(1);
    c.par_chunks_mut(rows_per_chunk * n)
        .zip(a.par_chunks(rows_per_chunk * k))
        .for_each(|(c_chunk, a_chunk)| {
            let rows = c_chunk.len() / n;
            sgemm(a_chunk, b, c_chunk, rows, k, n);
        });
}

pub(crate) fn sgemm(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slice lengths were checked above and all strides describe
    // dense row-major matrices inside those slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_pattern_counts_overlapping_taps() {
        let x = Tensor::full([1, 1, 3, 3], 1.0);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, &ConvSpec::new(1, 1, 3, 1)).unwrap();
        assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn identity_pointwise_kernel() {
        let x = Tensor::random_uniform([2, 1, 5, 7], -1.0, 1.0, 3);
        let w = Tensor::full([1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &w, None, &ConvSpec::new(1, 1, 1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn depthwise_stride2_output_is_ceil_half() {
        let x = Tensor::random_uniform([1, 4, 7, 9], -1.0, 1.0, 3);
        let w = Tensor::random_uniform([4, 1, 3, 3], -1.0, 1.0, 4);
        let y = conv2d(&x, &w, None, &ConvSpec::depthwise(4, 3, 2)).unwrap();
        assert_eq!(y.dims(), [1, 4, 4, 5]);
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::zeros([1, 2, 2, 2]);
        let w = Tensor::zeros([3, 2, 1, 1]);
        let y = conv2d(&x, &w, Some(&[1.0, 2.0, 3.0]), &ConvSpec::new(2, 3, 1, 1)).unwrap();
        assert_eq!(y.plane(0, 2), &[3.0; 4]);
    }

    #[test]
    fn mismatches_name_the_axis() {
        let x = Tensor::zeros([1, 3, 8, 8]);
        let w = Tensor::zeros([4, 3, 3, 3]);
        let err = conv2d(&x, &w, None, &ConvSpec::new(2, 4, 3, 1)).unwrap_err();
        assert!(err.to_string().contains("axis C"));
        let err = conv2d(
            &x,
            &Tensor::zeros([4, 3, 1, 1]),
            None,
            &ConvSpec::new(3, 4, 3, 1),
        )
        .unwrap_err();
        assert!(err.to_string().contains("kH"), "{err}");
        let err = conv2d(&x, &w, Some(&[0.0; 3]), &ConvSpec::new(3, 4, 3, 1)).unwrap_err();
        assert!(err.to_string().contains("bias"));
    }

    #[test]
    fn rejects_bad_spec() {
        let x = Tensor::zeros([1, 3, 8, 8]);
        let w = Tensor::zeros([4, 3, 3, 3]);
        let spec = ConvSpec::new(3, 4, 3, 1).with_groups(2);
        assert!(conv2d(&x, &w, None, &spec).is_err());
        let spec = ConvSpec {
            stride: 0,
            ..ConvSpec::new(3, 4, 3, 1)
        };
        assert!(conv2d(&x, &w, None, &spec).is_err());
    }

    #[test]
    fn too_small_input_is_shape_error() {
        let x = Tensor::zeros([1, 1, 1, 1]);
        let w = Tensor::zeros([1, 1, 3, 3]);
        let spec = ConvSpec::new(1, 1, 3, 1).with_padding(0);
        assert!(matches!(conv2d(&x, &w, None, &spec), Err(Error::Shape(_))));
    }
}
