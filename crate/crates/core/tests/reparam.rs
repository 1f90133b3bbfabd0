mod common;

use common::*;
use proptest::prelude::*;
use repvit::blocks::{ConvBn, DwBranch, RepDwBranches, RepDwLayer};
use repvit::params::Parameterized;
use repvit::reparam::{
    branch_terms, fuse_conv_bn, fuse_repdw, identity_to_dw3x3, merge_terms, pad_1x1_to_3x3,
    FusedConv,
};
use repvit::tensor::{batch_norm_infer, conv2d};
use repvit::{BnParams, ConvSpec, Error, Tensor};

const COMBOS: [(bool, bool); 4] = [(false, false), (false, true), (true, true), (true, false)];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn repdw_fusion_matches_train_form(seed in any::<u64>(), combo in 0usize..4, strided in any::<bool>()) {
        let mut g = Gen::new(seed);
        let (with_1x1, with_id) = COMBOS[combo];
        let stride = if strided && !with_id { 2 } else { 1 };
        let c = g.range(1, 8);
        let layer = g.repdw(c, stride, with_1x1, with_id);
        let x = g.tensor([1, c, 14, 14], -3.0, 3.0);
        let train = layer.forward(&x).unwrap();
        prop_assert!(train.max_abs_diff(&repdw_oracle(&layer, &x)) < 1e-5);
        let mut fused = layer.clone();
        fused.fuse().unwrap();
        let y = fused.forward(&x).unwrap();
        prop_assert!(y.max_abs_diff(&train) < 1e-4, "diff {}", y.max_abs_diff(&train));
        prop_assert!(fused.fused().unwrap().weights.is_finite());
    }

    #[test]
    fn single_branch_fusion_within_1e5(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let c = g.range(1, 8);
        let layer = g.repdw(c, 1, false, false);
        let x = g.tensor([1, c, 9, 9], -3.0, 3.0);
        let f = fuse_repdw(&layer).unwrap();
        let y = f.forward(&x, 1).unwrap();
        prop_assert!(y.max_abs_diff(&layer.forward(&x).unwrap()) < 1e-5);
    }

    #[test]
    fn conv_bn_fold_matches(seed in any::<u64>(), k in prop_oneof![Just(1usize), Just(3)], dw in any::<bool>()) {
        let mut g = Gen::new(seed);
        let cin = g.range(1, 6);
        let spec = if dw {
            ConvSpec::depthwise(cin, k, 1)
        } else {
            ConvSpec::new(cin, g.range(1, 6), k, 1)
        };
        let w = g.tensor(spec.weight_dims(), -1.0, 1.0);
        let b = g.coin().then(|| g.vec(spec.out_channels, -1.0, 1.0));
        let p = g.bn(spec.out_channels);
        let x = g.tensor([2, cin, 6, 5], -3.0, 3.0);
        let want = batch_norm_infer(&conv2d(&x, &w, b.as_deref(), &spec).unwrap(), &p).unwrap();
        let (w2, b2) = fuse_conv_bn(&w, b.as_deref(), &p).unwrap();
        let got = conv2d(&x, &w2, Some(&b2), &spec).unwrap();
        prop_assert!(got.max_abs_diff(&want) < 1e-5 * want.data().iter().fold(1f32, |m, v| m.max(v.abs())));
    }

    #[test]
    fn fusion_is_linear_in_branches(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let c = g.range(1, 8);
        let full = g.branches(c, true, true);
        let all = merge_terms(c, &branch_terms(&full, c).unwrap()).unwrap();

        let mut subset = full.clone();
        let extra = subset.identity.take().unwrap();
        let partial = merge_terms(c, &branch_terms(&subset, c).unwrap()).unwrap();
        let (kid, bid) = fuse_conv_bn(&identity_to_dw3x3(c), None, &extra).unwrap();
        let sum_w: Vec<f32> = partial.weights.data().iter().zip(kid.data()).map(|(a, b)| a + b).collect();
        let sum_b: Vec<f32> = partial.bias.iter().zip(&bid).map(|(a, b)| a + b).collect();
        for (a, b) in sum_w.iter().zip(all.weights.data()) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
        for (a, b) in sum_b.iter().zip(&all.bias) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn padded_1x1_is_forward_equivalent(seed in any::<u64>(), stride in 1usize..=2) {
        let mut g = Gen::new(seed);
        let c = g.range(1, 6);
        let w1 = g.tensor([c, 1, 1, 1], -1.0, 1.0);
        let x = g.tensor([1, c, 7, 8], -3.0, 3.0);
        let a = conv2d(&x, &w1, None, &ConvSpec::depthwise(c, 1, stride)).unwrap();
        let b = conv2d(&x, &pad_1x1_to_3x3(&w1).unwrap(), None, &ConvSpec::depthwise(c, 3, stride)).unwrap();
        prop_assert_eq!(a.dims(), b.dims());
        prop_assert!(a.max_abs_diff(&b) < 1e-6);
    }
}

#[test]
fn hundred_random_layers_cover_every_combination() {
    let mut worst = 0f32;
    for i in 0..100u64 {
        let mut g = Gen::new(0xfade + i);
        let (with_1x1, with_id) = COMBOS[(i % 4) as usize];
        let c = g.range(1, 16);
        let layer = g.repdw(c, 1, with_1x1, with_id);
        let x = g.tensor([1, c, 14, 14], -3.0, 3.0);
        let y = layer.forward(&x).unwrap();
        let mut f = layer.clone();
        f.fuse().unwrap();
        worst = worst.max(f.forward(&x).unwrap().max_abs_diff(&y));
    }
    assert!(worst < 1e-4, "worst {worst}");
}

#[test]
fn fuse_conv_bn_examples() {
    let mut g = Gen::new(1);
    let w = g.tensor([3, 1, 3, 3], -1.0, 1.0);
    let b = g.vec(3, -1.0, 1.0);
    let (w2, b2) = fuse_conv_bn(&w, Some(&b), &BnParams::identity(3, 0.0)).unwrap();
    assert_eq!((w2.clone(), b2.clone()), (w.clone(), b.clone()));
    let (w3, b3) = fuse_conv_bn(&w2, Some(&b2), &BnParams::identity(3, 0.0)).unwrap();
    assert_eq!((w3, b3), (w2, b2));

    let p = BnParams::new(vec![2.0], vec![3.0], vec![1.0], vec![4.0], 0.0).unwrap();
    let (w0, b0) = fuse_conv_bn(&Tensor::zeros([1, 1, 3, 3]), Some(&[0.0]), &p).unwrap();
    assert!(w0.data().iter().all(|&v| v == 0.0));
    assert_eq!(b0, vec![2.0]);

    let bad = BnParams::new(vec![1.0], vec![0.0], vec![0.0], vec![0.0], 0.0).unwrap();
    assert!(matches!(
        fuse_conv_bn(&w0, None, &bad),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        fuse_conv_bn(&w, None, &BnParams::identity(2, 0.0)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn identity_kernel_examples() {
    let k = identity_to_dw3x3(1);
    assert_eq!(k.dims(), [1, 1, 3, 3]);
    assert_eq!(k.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let x = Gen::new(2).tensor([2, 5, 6, 4], -3.0, 3.0);
    let y = conv2d(
        &x,
        &identity_to_dw3x3(5),
        None,
        &ConvSpec::depthwise(5, 3, 1),
    )
    .unwrap();
    assert_eq!(y, x);

    let p = Gen::new(3).bn(5);
    let (w, b) = fuse_conv_bn(&identity_to_dw3x3(5), None, &p).unwrap();
    let got = conv2d(&x, &w, Some(&b), &ConvSpec::depthwise(5, 3, 1)).unwrap();
    assert!(got.max_abs_diff(&batch_norm_infer(&x, &p).unwrap()) < 1e-5);
}

#[test]
fn pad_examples() {
    let w = Tensor::new([1, 1, 1, 1], vec![5.0]).unwrap();
    let p = pad_1x1_to_3x3(&w).unwrap();
    assert_eq!(p.data(), &[0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
    let z = pad_1x1_to_3x3(&Tensor::zeros([4, 1, 1, 1])).unwrap();
    assert_eq!(z, Tensor::zeros([4, 1, 3, 3]));
    assert!(pad_1x1_to_3x3(&Tensor::zeros([4, 1, 3, 3])).is_err());
}

#[test]
fn skip_only_and_zero_conv_fusions() {
    let c = 4;
    let zero3 = DwBranch {
        weight: Tensor::zeros([c, 1, 3, 3]),
        bn: BnParams::identity(c, 0.0),
    };
    let skip = RepDwLayer::new(
        c,
        1,
        RepDwBranches {
            conv3x3: zero3.clone(),
            conv1x1: None,
            identity: Some(BnParams::identity(c, 0.0)),
        },
    )
    .unwrap();
    let f = fuse_repdw(&skip).unwrap();
    assert_eq!(f.weights, identity_to_dw3x3(c));
    assert_eq!(f.bias, vec![0.0; c]);

    let p = Gen::new(4).bn(c);
    let adjusted = RepDwLayer::new(
        c,
        1,
        RepDwBranches {
            conv3x3: zero3,
            conv1x1: None,
            identity: Some(p.clone()),
        },
    )
    .unwrap();
    let x = Gen::new(5).tensor([1, c, 5, 5], -3.0, 3.0);
    let y = fuse_repdw(&adjusted).unwrap().forward(&x, 1).unwrap();
    assert!(y.max_abs_diff(&batch_norm_infer(&x, &p).unwrap()) < 1e-5);
}

#[test]
fn fusing_twice_is_state_error() {
    let mut layer = Gen::new(6).repdw(3, 1, true, true);
    layer.fuse().unwrap();
    assert!(matches!(fuse_repdw(&layer), Err(Error::State(_))));
}

#[test]
fn fusion_never_increases_param_count() {
    for (i, (with_1x1, with_id)) in COMBOS.iter().enumerate() {
        let c = 6;
        let mut layer = Gen::new(i as u64).repdw(c, 1, *with_1x1, *with_id);
        let before = layer.param_count();
        let expected = c * 9 + 4 * c + *with_1x1 as usize * (c + 4 * c) + *with_id as usize * 4 * c;
        assert_eq!(before, expected);
        layer.fuse().unwrap();
        assert_eq!(layer.param_count(), c * 9 + c);
        assert!(layer.param_count() < before);
    }
}

#[test]
fn conv_bn_layer_fuse_removes_norm() {
    let mut g = Gen::new(7);
    let mut l: ConvBn = g.conv_bn(ConvSpec::new(3, 5, 3, 2));
    let x = g.tensor([1, 3, 8, 8], -3.0, 3.0);
    let y = l.forward(&x).unwrap();
    let before = l.param_count();
    l.fuse().unwrap();
    assert!(l.is_fused());
    assert_eq!(l.param_count(), before - 4 * 5 + 5);
    assert!(l.forward(&x).unwrap().max_abs_diff(&y) < 1e-5);
    assert!(matches!(l.fuse(), Err(Error::State(_))));
}

#[test]
fn fused_conv_forward_checks_channels() {
    let f = FusedConv {
        weights: Tensor::zeros([3, 1, 3, 3]),
        bias: vec![0.0; 3],
    };
    assert!(f.forward(&Tensor::zeros([1, 4, 5, 5]), 1).is_err());
}
