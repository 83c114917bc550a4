#![allow(dead_code)]

use ghostconv::{Layer, Mode, Param, Rng, Scalar, Shape, Tensor};
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
/// Composite blocks stack several train-mode BN layers, which amplify rounding noise
/// in the loss; a wider step keeps that noise well below the tolerance.
pub const FD_STEP_BLOCK: f64 = 3e-5;
/// Gradient magnitudes below this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-2;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn randn<T: Scalar>(shape: Shape, rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.sample::<f64, _>(StandardNormal))).unwrap()
}

pub fn randn_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Direct six-deep loop nest: `out[n][o][y][x] = b[o] + Σ w[o][c][ky][kx] · in[n][c][y·s+ky-p][x·s+kx-p]`.
pub fn naive_conv(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: Option<&[f64]>,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * out_c * oh * ow];
    for b in 0..n {
        for o in 0..out_c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * c + ci) * k + ky) * k + kx]
                                    * x[((b * c + ci) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((b * out_c + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Grouped convolution by running the loop nest on each channel group separately.
pub fn naive_grouped_conv(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    groups: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let cg = c / groups;
    let og = out_c / groups;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * out_c * oh * ow];
    for b in 0..n {
        for g in 0..groups {
            let xs: Vec<f64> = (0..cg)
                .flat_map(|ci| {
                    let start = (b * c + g * cg + ci) * h * w;
                    x[start..start + h * w].to_vec()
                })
                .collect();
            let ws = &weight[g * og * cg * k * k..(g + 1) * og * cg * k * k];
            let (y, _, _) = naive_conv(&xs, (1, cg, h, w), ws, og, k, stride, pad, None);
            for o in 0..og {
                let dst = (b * out_c + g * og + o) * oh * ow;
                out[dst..dst + oh * ow].copy_from_slice(&y[o * oh * ow..(o + 1) * oh * ow]);
            }
        }
    }
    out
}

pub fn trainable_count(layer: &dyn Layer<f64>) -> usize {
    let mut n = 0;
    layer.visit_params_ref(&mut |_, p| {
        if p.trainable {
            n += 1;
        }
    });
    n
}

fn with_param(layer: &mut dyn Layer<f64>, index: usize, f: &mut dyn FnMut(&mut Param<f64>)) {
    let mut i = 0;
    layer.visit_params(&mut |_, p| {
        if p.trainable {
            if i == index {
                f(p);
            }
            i += 1;
        }
    });
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradReport {
    fn add(&mut self, what: String, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
        self.checked += 1;
        if rel > self.max_rel {
            self.max_rel = rel;
            self.worst = format!("{what}: analytic {analytic:e} numeric {numeric:e}");
        }
    }
}

/// Fourth-order central difference `(8(f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h`.
pub fn stencil(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let (p1, m1) = (f(h), f(-h));
    let (p2, m2) = (f(2.0 * h), f(-2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

/// Central finite differences of `L = Σ forward(x) ⊙ R` against `backward(R)`, over
/// every input element and every trainable parameter element.
pub fn grad_check(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, mode: Mode, seed: u64) -> GradReport {
    grad_check_step(layer, x, mode, seed, FD_STEP)
}

pub fn grad_check_step(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, mode: Mode, seed: u64, step: f64) -> GradReport {
    let mut r = rng(seed);
    let y = layer.forward(x, mode).unwrap();
    let weights = randn::<f64>(y.shape(), &mut r);
    layer.visit_params(&mut |_, p| p.zero_grad());
    let dx = layer.backward(&weights).unwrap();
    let mut analytic = Vec::new();
    layer.visit_params_ref(&mut |name, p| {
        if p.trainable {
            analytic.push((name.to_string(), p.grad.clone()));
        }
    });
    let loss = |layer: &mut dyn Layer<f64>, x: &Tensor<f64>| weighted_sum(&layer.forward(x, mode).unwrap(), &weights);

    let mut report = GradReport::default();
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        let num = stencil(step, |d| {
            xp.data_mut()[i] = orig + d;
            loss(layer, &xp)
        });
        xp.data_mut()[i] = orig;
        report.add(format!("input[{i}]"), dx.data()[i], num);
    }
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for (e, &g) in grad.iter().enumerate() {
            let num = stencil(step, |d| {
                with_param(layer, pi, &mut |p| p.value[e] += d);
                let l = loss(layer, x);
                with_param(layer, pi, &mut |p| p.value[e] -= d);
                l
            });
            report.add(format!("{name}[{e}]"), g, num);
        }
    }
    report
}

/// Randomizes every parameter and the BN running statistics. Weights get
/// fan-in-scaled variance so activations stay O(1) through stacked layers.
pub fn randomize_params(layer: &mut dyn Layer<f64>, seed: u64) {
    let mut r = rng(seed);
    layer.visit_params(&mut |name, p| {
        let fan_in: usize = p.dims.iter().skip(1).product::<usize>().max(1);
        for v in p.value.iter_mut() {
            let z: f64 = r.sample(StandardNormal);
            *v = if name.ends_with("running_var") {
                0.5 + z.abs()
            } else if name.ends_with("gamma") {
                1.0 + 0.3 * z
            } else if name.ends_with("weight") {
                z * (2.0 / fan_in as f64).sqrt()
            } else {
                0.3 * z
            };
        }
    });
}

pub fn mnist_fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/mnist")
}

/// The bundled 1000/500 MNIST subset, normalized with train statistics.
pub fn mnist_fixture() -> ghostconv::train::Split {
    ghostconv::train::data::load(ghostconv::train::DatasetKind::Mnist, &mnist_fixture_dir()).unwrap()
}
