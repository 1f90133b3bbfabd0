//! Loop-based reference implementations and seeded generators shared by the
//! integration tests. Oracles accumulate in f64 and read only public fields.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repvit::blocks::{
    ChannelMixer, Classifier, ConvBn, DownsampleLayer, DwBranch, RepDwBranches, RepDwForm,
    RepDwLayer, RepVitBlock, SeLayer, Stem,
};

use repvit::blocks::se_reduction;
use repvit::params::ParamKind;
use repvit::tensor::BN_EPS;
use repvit::{BnParams, ConvSpec, Form, Model, ModelConfig, Parameterized, Tensor};

// ---------------------------------------------------------------- primitives

/// Direct convolution, seven nested loops, zero padding.
pub fn conv_oracle(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let [n, cin, h, wd] = x.dims();
    let [cout, cpg, k, _] = w.dims();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let opg = cout / groups;
    assert_eq!(cpg * groups, cin);
    let mut out = vec![0f32; n * cout * ho * wo];
    for b in 0..n {
        for oc in 0..cout {
            let g = oc / opg;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |b| b[oc] as f64);
                    for ic in 0..cpg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.at(b, g * cpg + ic, iy as usize, ix as usize);
                                acc += xv as f64 * w.at(oc, ic, ky, kx) as f64;
                            }
                        }
                    }
                    out[((b * cout + oc) * ho + oy) * wo + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::new([n, cout, ho, wo], out).unwrap()
}

pub fn bn_oracle(x: &Tensor, p: &BnParams) -> Tensor {
    let [n, c, h, w] = x.dims();
    let mut out = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let s = p.gamma[ch] as f64 / (p.running_var[ch] as f64 + p.eps as f64).sqrt();
            for y in 0..h {
                for xx in 0..w {
                    let v = x.at(b, ch, y, xx) as f64;
                    let r = (v - p.running_mean[ch] as f64) * s + p.beta[ch] as f64;
                    out.data_mut()[((b * c + ch) * h + y) * w + xx] = r as f32;
                }
            }
        }
    }
    out
}

pub fn gelu_scalar_oracle(v: f64) -> f64 {
    0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2))
}

pub fn gelu_oracle(x: &Tensor) -> Tensor {
    x.map(|v| gelu_scalar_oracle(v as f64) as f32)
}

pub fn sigmoid_oracle(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn add_oracle(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.dims(), b.dims());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.dims(), data).unwrap()
}

pub fn gap_oracle(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.dims();
    let mut out = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0f64;
            for y in 0..h {
                for xx in 0..w {
                    acc += x.at(b, ch, y, xx) as f64;
                }
            }
            out.push((acc / (h * w) as f64) as f32);
        }
    }
    Tensor::new([n, c, 1, 1], out).unwrap()
}

/// `x` viewed as `[N, F]`, `w` as `[O, F]`.
pub fn linear_oracle(x: &Tensor, w: &Tensor, bias: Option<&[f32]>) -> Tensor {
    let n = x.n();
    let f = x.len() / n;
    let o = w.n();
    assert_eq!(w.len(), o * f);
    let mut out = Vec::with_capacity(n * o);
    for b in 0..n {
        for j in 0..o {
            let mut acc = bias.map_or(0.0, |b| b[j] as f64);
            for i in 0..f {
                acc += x.data()[b * f + i] as f64 * w.data()[j * f + i] as f64;
            }
            out.push(acc as f32);
        }
    }
    Tensor::new([n, o, 1, 1], out).unwrap()
}

// ------------------------------------------------------------------- blocks

pub fn conv_bn_oracle(l: &ConvBn, x: &Tensor) -> Tensor {
    let s = &l.spec;
    let y = conv_oracle(
        x,
        &l.weight,
        l.bias.as_deref(),
        s.stride,
        s.padding,
        s.groups,
    );
    match &l.bn {
        Some(bn) => bn_oracle(&y, bn),
        None => y,
    }
}

/// Sum of BN(branch(x)) over every train-form branch.
pub fn repdw_train_oracle(br: &RepDwBranches, stride: usize, x: &Tensor) -> Tensor {
    let c = x.c();
    let mut y = bn_oracle(
        &conv_oracle(x, &br.conv3x3.weight, None, stride, 1, c),
        &br.conv3x3.bn,
    );
    if let Some(b1) = &br.conv1x1 {
        let t = bn_oracle(&conv_oracle(x, &b1.weight, None, stride, 0, c), &b1.bn);
        y = add_oracle(&y, &t);
    }
    if let Some(id) = &br.identity {
        y = add_oracle(&y, &bn_oracle(x, id));
    }
    y
}

pub fn repdw_oracle(layer: &RepDwLayer, x: &Tensor) -> Tensor {
    match layer.form() {
        RepDwForm::Train(br) => repdw_train_oracle(br, layer.stride(), x),
        RepDwForm::Fused(f) => conv_oracle(
            x,
            &f.weights,
            Some(&f.bias),
            layer.stride(),
            1,
            layer.channels(),
        ),
    }
}

pub fn se_oracle(se: &SeLayer, x: &Tensor) -> Tensor {
    let pooled = gap_oracle(x);
    let hidden =
        linear_oracle(&pooled, &se.reduce_weight, Some(&se.reduce_bias)).map(|v| v.max(0.0));
    let logits = linear_oracle(&hidden, &se.expand_weight, Some(&se.expand_bias));
    let [n, c, h, w] = x.dims();
    let mut y = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let g = sigmoid_oracle(logits.data()[b * c + ch] as f64) as f32;
            let start = (b * c + ch) * h * w;
            y.data_mut()[start..start + h * w]
                .iter_mut()
                .for_each(|v| *v *= g);
        }
    }
    y
}

pub fn mixer_oracle(m: &ChannelMixer, x: &Tensor) -> Tensor {
    let h = gelu_oracle(&conv_bn_oracle(&m.expand, x));
    add_oracle(x, &conv_bn_oracle(&m.project, &h))
}

pub fn block_oracle(b: &RepVitBlock, x: &Tensor) -> Tensor {
    let mut t = repdw_oracle(&b.token_mixer, x);
    if let Some(se) = &b.se {
        t = se_oracle(se, &t);
    }
    mixer_oracle(&b.channel_mixer, &t)
}

pub fn downsample_oracle(d: &DownsampleLayer, x: &Tensor) -> Tensor {
    let t = block_oracle(&d.pre_block, x);
    let t = repdw_oracle(&d.spatial_dw, &t);
    let z = conv_bn_oracle(&d.channel_proj, &t);
    mixer_oracle(&d.ffn, &z)
}

pub fn stem_oracle(s: &Stem, x: &Tensor) -> Tensor {
    let h = gelu_oracle(&conv_bn_oracle(&s.conv1, x));
    gelu_oracle(&conv_bn_oracle(&s.conv2, &h))
}

pub fn classifier_oracle(c: &Classifier, x: &Tensor) -> Tensor {
    linear_oracle(&gap_oracle(x), &c.weight, Some(&c.bias))
}

pub fn model_oracle(m: &Model, x: &Tensor) -> Tensor {
    let mut h = stem_oracle(&m.stem, x);
    for stage in &m.stages {
        if let Some(d) = &stage.downsample {
            h = downsample_oracle(d, &h);
        }
        for b in &stage.blocks {
            h = block_oracle(b, &h);
        }
    }
    classifier_oracle(&m.classifier, &h)
}

// --------------------------------------------------------------- generators

/// Seeded source of random layers. Weights lie in [-1, 1]; BN statistics
/// are kept well-conditioned (var in [0.2, 2]).
pub struct Gen(ChaCha8Rng);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }

    pub fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        self.0.gen_range(lo..=hi_inclusive)
    }

    pub fn coin(&mut self) -> bool {
        self.0.gen_bool(0.5)
    }

    pub fn vec(&mut self, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| self.0.gen_range(lo..hi)).collect()
    }

    pub fn tensor(&mut self, dims: [usize; 4], lo: f32, hi: f32) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(dims, self.vec(n, lo, hi)).unwrap()
    }

    pub fn bn(&mut self, c: usize) -> BnParams {
        BnParams::new(
            self.vec(c, 0.5, 1.5),
            self.vec(c, -0.5, 0.5),
            self.vec(c, -0.5, 0.5),
            self.vec(c, 0.2, 2.0),
            BN_EPS,
        )
        .unwrap()
    }

    pub fn dw_branch(&mut self, c: usize, k: usize) -> DwBranch {
        DwBranch {
            weight: self.tensor([c, 1, k, k], -1.0, 1.0),
            bn: self.bn(c),
        }
    }

    pub fn branches(&mut self, c: usize, with_1x1: bool, with_identity: bool) -> RepDwBranches {
        RepDwBranches {
            conv3x3: self.dw_branch(c, 3),
            conv1x1: with_1x1.then(|| self.dw_branch(c, 1)),
            identity: with_identity.then(|| self.bn(c)),
        }
    }

    pub fn repdw(
        &mut self,
        c: usize,
        stride: usize,
        with_1x1: bool,
        with_identity: bool,
    ) -> RepDwLayer {
        let br = self.branches(c, with_1x1, with_identity);
        RepDwLayer::new(c, stride, br).unwrap()
    }

    pub fn conv_bn(&mut self, spec: ConvSpec) -> ConvBn {
        let mut l = ConvBn::new(spec);
        l.weight = self.tensor(spec.weight_dims(), -1.0, 1.0);
        l.bn = Some(self.bn(spec.out_channels));
        l
    }

    pub fn mixer(&mut self, c: usize) -> ChannelMixer {
        ChannelMixer {
            expand: self.conv_bn(ConvSpec::new(c, 2 * c, 1, 1)),
            project: self.conv_bn(ConvSpec::new(2 * c, c, 1, 1)),
        }
    }

    pub fn se(&mut self, c: usize, r: usize) -> SeLayer {
        let mut se = SeLayer::new(c, r).unwrap();
        let h = c / r;
        se.reduce_weight = self.tensor([h, c, 1, 1], -1.0, 1.0);
        se.reduce_bias = self.vec(h, -0.5, 0.5);
        se.expand_weight = self.tensor([c, h, 1, 1], -1.0, 1.0);
        se.expand_bias = self.vec(c, -0.5, 0.5);
        se
    }

    pub fn block(&mut self, c: usize, with_se: bool) -> RepVitBlock {
        let tm = self.repdw(c, 1, false, true);
        let se = with_se.then(|| self.se(c, repvit::blocks::se_reduction(c)));
        RepVitBlock::from_parts(tm, se, self.mixer(c)).unwrap()
    }

    pub fn downsample(&mut self, cin: usize, cout: usize) -> DownsampleLayer {
        DownsampleLayer {
            pre_block: self.block(cin, false),
            spatial_dw: self.repdw(cin, 2, false, false),
            channel_proj: self.conv_bn(ConvSpec::new(cin, cout, 1, 1)),
            ffn: self.mixer(cout),
        }
    }

    pub fn stem(&mut self, c: usize) -> Stem {
        Stem {
            conv1: self.conv_bn(ConvSpec::new(3, c / 2, 3, 2)),
            conv2: self.conv_bn(ConvSpec::new(c / 2, c, 3, 2)),
        }
    }

    /// Overwrites every model parameter: weights and biases uniform in
    /// `±scale`, BN statistics as in [`Gen::bn`].
    pub fn randomize(&mut self, model: &mut Model, scale: f32) {
        for p in model.params_mut("") {
            let (lo, hi) = match p.kind {
                ParamKind::Weight | ParamKind::Bias => (-scale, scale),
                ParamKind::BnGamma => (0.5, 1.5),
                ParamKind::BnBeta | ParamKind::BnMean => (-0.5, 0.5),
                ParamKind::BnVar => (0.2, 2.0),
            };
            p.data
                .iter_mut()
                .for_each(|v| *v = self.0.gen_range(lo..hi));
        }
    }
}

/// Toy config that exercises every structural element at 32×32.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        name: "toy".into(),
        stage_widths: [4, 8, 12, 16],
        stage_depths: [2, 1, 3, 1],
        num_classes: 7,
        input_resolution: 32,
    }
}

/// Closed-form `(params, macs)` for a batch-1 forward at `r × r`.
pub fn closed_form(cfg: &ModelConfig, r: usize, form: Form) -> (u64, u64) {
    let fused = form == Form::Fused;
    // conv + BN: weights plus either 4 BN vectors or one folded bias
    let conv_bn = |w: usize, out: usize| w + if fused { out } else { 4 * out };
    // depthwise 3×3 token mixer, optional identity BN
    let dw = |c: usize, identity: bool| {
        if fused {
            9 * c + c
        } else {
            9 * c + 4 * c + if identity { 4 * c } else { 0 }
        }
    };
    let mixer = |c: usize| conv_bn(2 * c * c, 2 * c) + conv_bn(2 * c * c, c);
    let se = |c: usize| {
        let h = c / se_reduction(c);
        2 * c * h + h + c
    };

    let [c0, ..] = cfg.stage_widths;
    let (mut p, mut m) = (0usize, 0usize);
    p += conv_bn(27 * (c0 / 2), c0 / 2) + conv_bn(9 * (c0 / 2) * c0, c0);
    m += 27 * (c0 / 2) * (r / 2) * (r / 2) + 9 * (c0 / 2) * c0 * (r / 4) * (r / 4);
    let mut side = r / 4;
    for s in 0..4 {
        let c = cfg.stage_widths[s];
        if s > 0 {
            let cin = cfg.stage_widths[s - 1];
            let area = side * side;
            side /= 2;
            let half = side * side;
            p += dw(cin, true) + mixer(cin);
            m += 9 * cin * area + 4 * cin * cin * area;
            p += dw(cin, false) + conv_bn(cin * c, c) + mixer(c);
            m += 9 * cin * half + cin * c * half + 4 * c * c * half;
        }
        let area = side * side;
        for i in 0..cfg.stage_depths[s] {
            p += dw(c, true) + mixer(c);
            m += 9 * c * area + 4 * c * c * area;
            if i % 2 == 0 {
                p += se(c);
                m += 2 * c * (c / se_reduction(c));
            }
        }
    }
    let c3 = cfg.stage_widths[3];
    p += cfg.num_classes * c3 + cfg.num_classes;
    m += cfg.num_classes * c3;
    (p as u64, m as u64)
}
