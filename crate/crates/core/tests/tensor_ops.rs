mod common;

use common::*;
use ghostconv::ops::*;
use ghostconv::tensor_io;
use ghostconv::{Layer, Mode, Shape, Tensor};
use proptest::prelude::*;
use std::path::Path;

fn conv_case(
    (n, c, h, w): (usize, usize, usize, usize),
    out: usize,
    k: usize,
    bias: bool,
    seed: u64,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let mut r = rng(seed);
    let x = randn_vec(n * c * h * w, &mut r);
    // fan-in scaled like trained layers, so outputs stay O(1) and f32 rounding stays small
    let scale = (2.0 / (c * k * k) as f64).sqrt();
    let wt = randn_vec(out * c * k * k, &mut r).into_iter().map(|v| v * scale).collect();
    let b = bias.then(|| randn_vec(out, &mut r));
    (x, wt, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_loop_nest(
        n in 1usize..=2, c in 1usize..=8, h in 3usize..=16, w in 3usize..=16,
        out in 1usize..=6, k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..=2, bias in any::<bool>(), seed in any::<u64>(),
    ) {
        prop_assume!(k <= h && k <= w);
        let pad = (k - 1) / 2;
        let (x, wt, b) = conv_case((n, c, h, w), out, k, bias, seed);
        let (expect, oh, ow) = naive_conv(&x, (n, c, h, w), &wt, out, k, stride, pad, b.as_deref());

        let l64 = Conv2d::<f64>::new(c, out, k, stride, pad, bias).with_weights(wt.clone(), b.clone()).unwrap();
        let y64 = conv2d_forward(&Tensor::from_vec(Shape::new(n, c, h, w), x.clone()).unwrap(), &l64).unwrap();
        prop_assert_eq!(y64.shape(), Shape::new(n, out, oh, ow));
        for (a, e) in y64.data().iter().zip(&expect) {
            prop_assert!((a - e).abs() < 1e-10, "f64 {} vs {}", a, e);
        }

        let f = |v: &[f64]| v.iter().map(|&z| z as f32).collect::<Vec<f32>>();
        let l32 = Conv2d::<f32>::new(c, out, k, stride, pad, bias).with_weights(f(&wt), b.as_deref().map(f)).unwrap();
        let y32 = conv2d_forward(&Tensor::from_vec(Shape::new(n, c, h, w), f(&x)).unwrap(), &l32).unwrap();
        for (a, e) in y32.data().iter().zip(&expect) {
            prop_assert!((*a as f64 - e).abs() < 1e-5, "f32 {} vs {}", a, e);
        }
    }

    #[test]
    fn depthwise_matches_grouped_conv(
        n in 1usize..=2, c in 1usize..=8, h in 3usize..=12, w in 3usize..=12,
        k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..=2, seed in any::<u64>(),
    ) {
        prop_assume!(k <= h && k <= w);
        let pad = (k - 1) / 2;
        let mut r = rng(seed);
        let x = randn_vec(n * c * h * w, &mut r);
        let wt = randn_vec(c * k * k, &mut r);
        let expect = naive_grouped_conv(&x, (n, c, h, w), &wt, c, c, k, stride, pad);
        let layer = DepthwiseConv2d::<f64>::new(c, k, stride, pad).with_weights(wt).unwrap();
        let y = depthwise_conv2d_forward(&Tensor::from_vec(Shape::new(n, c, h, w), x).unwrap(), &layer).unwrap();
        prop_assert_eq!(y.len(), expect.len());
        for (a, e) in y.data().iter().zip(&expect) {
            prop_assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_is_linear_without_bias(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = Shape::new(2, 3, 7, 6);
        let x1 = randn::<f64>(shape, &mut r);
        let x2 = randn::<f64>(shape, &mut r);
        let layer = Conv2d::<f64>::new(3, 4, 3, 1, 1, false).init(&mut r);
        let lhs = conv2d_forward(&x1.scale(a).add(&x2.scale(b)).unwrap(), &layer).unwrap();
        let rhs = conv2d_forward(&x1, &layer).unwrap().scale(a)
            .add(&conv2d_forward(&x2, &layer).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn gtsr_round_trip(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let t = randn::<f64>(Shape::new(2, c, h, w), &mut rng(seed));
        let back: Tensor<f64> = tensor_io::decode(&tensor_io::encode(&t), Path::new("t")).unwrap();
        prop_assert_eq!(&back, &t);
        let text: Tensor<f64> = tensor_io::decode_text(&tensor_io::encode_text(&t)).unwrap();
        prop_assert_eq!(&text, &t);
    }
}

#[test]
fn random_3x8x8_conv_against_loop_nest() {
    let (x, wt, _) = conv_case((1, 3, 8, 8), 4, 3, false, 11);
    let (expect, _, _) = naive_conv(&x, (1, 3, 8, 8), &wt, 4, 3, 1, 1, None);
    let layer = Conv2d::<f64>::new(3, 4, 3, 1, 1, false).with_weights(wt, None).unwrap();
    let y = conv2d_forward(&Tensor::from_vec(Shape::new(1, 3, 8, 8), x).unwrap(), &layer).unwrap();
    let diff = y.data().iter().zip(&expect).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6);
}

#[test]
fn scalar_conv_backward() {
    let mut layer = Conv2d::<f64>::new(1, 1, 1, 1, 0, true).with_weights(vec![3.0], Some(vec![1.0])).unwrap();
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![2.0]).unwrap();
    assert_eq!(layer.forward(&x, Mode::Train).unwrap().data(), &[7.0]);
    let g = conv2d_backward(&x, &layer, &Tensor::full(Shape::new(1, 1, 1, 1), 1.0).unwrap()).unwrap();
    assert_eq!(g.input.data(), &[3.0]);
    assert_eq!(g.weight, vec![2.0]);
    assert_eq!(g.bias, Some(vec![1.0]));
}

#[test]
fn identity_depthwise_passes_gradient_through() {
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let mut layer = DepthwiseConv2d::<f64>::same(1, 3).with_weights(k).unwrap();
    let x = randn::<f64>(Shape::new(1, 1, 5, 5), &mut rng(2));
    assert_eq!(layer.forward(&x, Mode::Train).unwrap(), x);
    let g = randn::<f64>(Shape::new(1, 1, 5, 5), &mut rng(3));
    assert_eq!(layer.backward(&g).unwrap(), g);
}

#[test]
fn elementwise_examples() {
    let x = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);

    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(avgpool_forward(&x, &AvgPool2d::global()).unwrap().data(), &[2.5]);

    let logits = Tensor::<f64>::zeros(Shape::new(1, 10, 1, 1)).unwrap();
    let (loss, _) = softmax_cross_entropy(&logits, &[3]).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn neutral_batchnorm_twice_is_identity() {
    let mut bn = BatchNorm2d::<f64>::new(3);
    bn.eps = 0.0;
    let x = randn::<f64>(Shape::new(2, 3, 4, 4), &mut rng(5));
    let y = bn.infer(&bn.infer(&x).unwrap()).unwrap();
    assert_eq!(y, x);

    let mut bn = BatchNorm2d::<f64>::new(3);
    randomize_params(&mut bn, 9);
    let a = bn.infer(&x).unwrap();
    assert_eq!(a, bn.infer(&x).unwrap());
    // per-channel affine: y(x1) - y(x0) is proportional to x1 - x0
    let shifted = x.map(|v| v + 1.0);
    let b = bn.infer(&shifted).unwrap();
    for c in 0..3 {
        let d: Vec<f64> = b.plane(0, c).iter().zip(a.plane(0, c)).map(|(p, q)| p - q).collect();
        assert!(d.iter().all(|v| (v - d[0]).abs() < 1e-12));
    }
}

#[test]
fn running_variance_stays_nonnegative() {
    let mut bn = BatchNorm2d::<f64>::new(2);
    for s in 0..5 {
        bn.forward(&randn(Shape::new(2, 2, 3, 3), &mut rng(s)), Mode::Train).unwrap();
    }
    assert!(bn.running_var.value.iter().all(|&v| v >= 0.0));
}

fn assert_grads(name: &str, layer: &mut dyn Layer<f64>, shape: Shape, mode: Mode, seeds: std::ops::Range<u64>) {
    for seed in seeds {
        let x = randn::<f64>(shape, &mut rng(seed + 100));
        let rep = grad_check(layer, &x, mode, seed);
        assert!(rep.max_rel < 1e-6, "{name} seed {seed}: rel {:e} at {}", rep.max_rel, rep.worst);
        assert!(rep.checked >= x.len());
    }
}

#[test]
fn conv_gradients() {
    for (i, &(c, o, k, s, p, bias)) in [(3, 4, 3, 1, 1, true), (2, 3, 3, 2, 1, false), (4, 2, 1, 1, 0, true), (2, 2, 5, 2, 2, false)]
        .iter()
        .enumerate()
    {
        let mut layer = Conv2d::<f64>::new(c, o, k, s, p, bias).init(&mut rng(i as u64));
        randomize_params(&mut layer, i as u64);
        assert_grads("conv", &mut layer, Shape::new(2, c, 7, 6), Mode::Train, 0..2);
    }
}

#[test]
fn depthwise_gradients() {
    for (i, &(c, k, s)) in [(3, 3, 1), (4, 3, 2), (2, 5, 1), (2, 1, 1)].iter().enumerate() {
        let mut layer = DepthwiseConv2d::<f64>::new(c, k, s, (k - 1) / 2);
        randomize_params(&mut layer, i as u64);
        assert_grads("depthwise", &mut layer, Shape::new(2, c, 6, 7), Mode::Train, 0..2);
    }
}

#[test]
fn batchnorm_gradients() {
    let mut bn = BatchNorm2d::<f64>::new(4);
    randomize_params(&mut bn, 1);
    assert_grads("bn train", &mut bn, Shape::new(2, 4, 5, 5), Mode::Train, 0..2);
    assert_grads("bn eval", &mut bn, Shape::new(2, 4, 5, 5), Mode::Eval, 0..2);
}

#[test]
fn fc_pool_relu_gradients() {
    let mut fc = Linear::<f64>::new(12, 5, true);
    randomize_params(&mut fc, 2);
    assert_grads("fc", &mut fc, Shape::new(2, 12, 1, 1), Mode::Train, 0..2);

    assert_grads("global pool", &mut AvgPool2d::<f64>::global(), Shape::new(2, 3, 5, 4), Mode::Train, 0..2);
    assert_grads("window pool", &mut AvgPool2d::<f64>::windowed(2, 2), Shape::new(2, 3, 6, 4), Mode::Train, 0..2);
    assert_grads("relu", &mut Relu::<f64>::new(), Shape::new(2, 3, 4, 4), Mode::Train, 0..3);
    assert_grads("flatten", &mut Flatten::new(), Shape::new(2, 3, 2, 2), Mode::Train, 0..1);
}

#[test]
fn softmax_cross_entropy_gradient() {
    for seed in 0..5 {
        let logits = randn::<f64>(Shape::new(3, 7, 1, 1), &mut rng(seed));
        let labels = [1, 6, 0];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut z = logits.clone();
        for i in 0..z.len() {
            let orig = z.data()[i];
            z.data_mut()[i] = orig + FD_STEP;
            let lp = softmax_cross_entropy(&z, &labels).unwrap().0;
            z.data_mut()[i] = orig - FD_STEP;
            let lm = softmax_cross_entropy(&z, &labels).unwrap().0;
            z.data_mut()[i] = orig;
            let num = (lp - lm) / (2.0 * FD_STEP);
            let a = grad.data()[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(FD_FLOOR);
            assert!(rel < 1e-6, "logit {i}: {a} vs {num}");
        }
    }
}

#[test]
fn gtsr_rejects_corruption_with_offset() {
    let t = randn::<f32>(Shape::new(1, 2, 3, 3), &mut rng(0));
    let bytes = tensor_io::encode(&t);
    match tensor_io::decode::<f32>(&bytes[..bytes.len() - 3], Path::new("cut.gtsr")) {
        Err(ghostconv::Error::Format { offset, path, .. }) => {
            assert_eq!(offset, 24);
            assert_eq!(path, Path::new("cut.gtsr"));
        }
        other => panic!("expected a format error, got {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(tensor_io::decode::<f32>(&bad, Path::new("x")).is_err());
    let wide: Tensor<f64> = tensor_io::decode(&bytes, Path::new("w")).unwrap();
    assert_eq!(wide.cast::<f32>(), t);
}
