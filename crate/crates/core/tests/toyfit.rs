mod common;

use ghostconv::arch::{Network, NetworkSpec};
use ghostconv::toyfit::{
    apply_kernel, fit_depthwise, harvest_pairs, mse, mse_csv, mse_sweep, ncc, FeaturePair, KERNEL_SIZES,
};
use ghostconv::{Shape, Tensor};
use proptest::prelude::*;

fn random_pair(h: usize, w: usize, seed: u64) -> FeaturePair {
    let mut r = common::rng(seed);
    let s = common::randn_vec(h * w, &mut r);
    let noise = common::randn_vec(h * w, &mut r);
    // a blurred, noisy copy so that every kernel size fits something
    let mut t = apply_kernel(&s, h, w, &[0.1, 0.2, 0.1, 0.2, 0.6, 0.3, 0.0, 0.1, 0.2], 3);
    t.iter_mut().zip(&noise).for_each(|(v, n)| *v += 0.3 * n);
    FeaturePair::new(h, w, s, t, "random").unwrap()
}

/// Source shifted by `(dy, dx)` with zero fill: `out[y][x] = src[y + dy][x + dx]`.
fn shifted(src: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> Vec<f64> {
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize + dy, (i % w) as isize + dx);
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                src[y as usize * w + x as usize]
            }
        })
        .collect()
}

#[test]
fn self_pair_recovers_identity() {
    let p = random_pair(10, 9, 1);
    let pair = FeaturePair::new(10, 9, p.source.clone(), p.source.clone(), "self").unwrap();
    for d in KERNEL_SIZES {
        let fit = fit_depthwise(&pair, d).unwrap();
        assert!(fit.mse < 1e-10, "d={d}: {}", fit.mse);
        for (i, &k) in fit.kernel.iter().enumerate() {
            let want = if i == d * d / 2 { 1.0 } else { 0.0 };
            assert!((k - want).abs() < 1e-8, "d={d} tap {i}: {k}");
        }
    }
    let rows = mse_sweep(&[pair], &KERNEL_SIZES).unwrap();
    assert!(rows.iter().all(|r| r.mse < 1e-10));
}

#[test]
fn scaled_copy_gives_scalar_kernel() {
    let p = random_pair(8, 8, 2);
    let t: Vec<f64> = p.source.iter().map(|v| 2.0 * v).collect();
    let fit = fit_depthwise(&FeaturePair::new(8, 8, p.source.clone(), t, "x2").unwrap(), 1).unwrap();
    assert!((fit.kernel[0] - 2.0).abs() < 1e-12);
    assert!(fit.mse < 1e-12);
}

#[test]
fn one_pixel_shift_gives_off_center_delta() {
    let (h, w) = (9, 12);
    let src = random_pair(h, w, 3).source;
    // moving the content one pixel right reads the source one column to the left
    let target = shifted(&src, h, w, 0, -1);
    let fit = fit_depthwise(&FeaturePair::new(h, w, src.clone(), target, "shift").unwrap(), 3).unwrap();
    let mut delta = vec![0.0; 9];
    delta[3] = 1.0;
    for (k, e) in fit.kernel.iter().zip(&delta) {
        assert!((k - e).abs() < 1e-8, "{:?}", fit.kernel);
    }
    assert!(fit.mse < 1e-12);

    // with wrap-around the first column cannot be matched; the delta leaves exactly
    // the boundary error and the optimum can only do better
    let wrapped: Vec<f64> = (0..h * w).map(|i| src[(i / w) * w + (i % w + w - 1) % w]).collect();
    let boundary: f64 = (0..h).map(|y| src[y * w + w - 1].powi(2)).sum::<f64>() / (h * w) as f64;
    let pair = FeaturePair::new(h, w, src.clone(), wrapped.clone(), "wrap").unwrap();
    let fit = fit_depthwise(&pair, 3).unwrap();
    assert!((mse(&apply_kernel(&src, h, w, &delta, 3), &wrapped) - boundary).abs() < 1e-12);
    assert!(fit.mse <= boundary + 1e-12);
    assert!(fit.mse > 0.2 * boundary, "{} vs {boundary}", fit.mse);
}

#[test]
fn residual_is_orthogonal_to_every_shift() {
    for seed in 0..4 {
        let p = random_pair(11, 13, 10 + seed);
        for d in KERNEL_SIZES {
            let fit = fit_depthwise(&p, d).unwrap();
            let out = apply_kernel(&p.source, p.height, p.width, &fit.kernel, d);
            let res: Vec<f64> = out.iter().zip(&p.target).map(|(a, b)| a - b).collect();
            let rn = res.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = (d / 2) as isize;
            for ky in -r..=r {
                for kx in -r..=r {
                    let col = shifted(&p.source, p.height, p.width, ky, kx);
                    let cn = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = col.iter().zip(&res).map(|(a, b)| a * b).sum();
                    assert!(dot.abs() < 1e-8 * rn * cn, "d={d} ({ky},{kx}): {dot:e}");
                }
            }
            assert!((mse(&out, &p.target) - fit.mse).abs() < 1e-12);
        }
    }
}

/// Plain gradient descent on the kernel taps, step `1/L` from a power-iteration bound.
fn gd_fit(p: &FeaturePair, d: usize) -> f64 {
    let (h, w) = (p.height, p.width);
    let n = (h * w) as f64;
    let r = (d / 2) as isize;
    let cols: Vec<Vec<f64>> = (0..d * d)
        .map(|t| shifted(&p.source, h, w, t as isize / d as isize - r, t as isize % d as isize - r))
        .collect();
    let gram: Vec<Vec<f64>> = cols
        .iter()
        .map(|a| cols.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n).collect())
        .collect();
    let rhs: Vec<f64> = cols.iter().map(|a| a.iter().zip(&p.target).map(|(x, y)| x * y).sum::<f64>() / n).collect();
    let mut v = vec![1.0; d * d];
    let mut lmax = 0.0;
    for _ in 0..200 {
        let gv: Vec<f64> = gram.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        lmax = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = gv.iter().map(|x| x / lmax).collect();
    }
    let step = 1.0 / (1.1 * lmax);
    let mut k = vec![0.0; d * d];
    for _ in 0..20_000 {
        let grad: Vec<f64> = gram
            .iter()
            .zip(&rhs)
            .map(|(row, b)| row.iter().zip(&k).map(|(a, x)| a * x).sum::<f64>() - b)
            .collect();
        k.iter_mut().zip(&grad).for_each(|(x, g)| *x -= step * g);
    }
    mse(&apply_kernel(&p.source, h, w, &k, d), &p.target)
}

#[test]
fn closed_form_agrees_with_gradient_descent() {
    for seed in 0..3 {
        let p = random_pair(10, 10, 20 + seed);
        for d in [1, 3, 5] {
            let closed = fit_depthwise(&p, d).unwrap().mse;
            let gd = gd_fit(&p, d);
            assert!((closed - gd).abs() < 1e-6, "seed {seed} d={d}: {closed} vs {gd}");
            assert!(closed <= gd + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mse_never_grows_with_kernel_size(h in 7usize..14, w in 7usize..14, seed in any::<u64>()) {
        let rows = mse_sweep(&[random_pair(h, w, seed)], &KERNEL_SIZES).unwrap();
        for pair in rows.windows(2) {
            prop_assert!(pair[1].mse <= pair[0].mse * (1.0 + 1e-9) + 1e-15, "{:?}", rows);
        }
    }
}

#[test]
fn zero_source_is_flagged_degenerate() {
    let t = random_pair(8, 8, 4).target;
    let fit = fit_depthwise(&FeaturePair::new(8, 8, vec![0.0; 64], t.clone(), "zero").unwrap(), 3).unwrap();
    assert!(fit.degenerate);
    assert!(fit.kernel.iter().all(|k| k.abs() < 1e-12));
    assert!((fit.mse - t.iter().map(|v| v * v).sum::<f64>() / 64.0).abs() < 1e-12);
}

#[test]
fn invalid_fits_are_rejected() {
    let p = random_pair(6, 8, 5);
    assert!(fit_depthwise(&p, 2).is_err());
    assert!(fit_depthwise(&p, 7).is_err());
    assert!(FeaturePair::new(2, 2, vec![0.0; 4], vec![0.0; 3], "bad").is_err());
    assert!(FeaturePair::new(1, 2, vec![0.0, f64::NAN], vec![0.0; 2], "nan").is_err());
    assert!(mse_sweep(&[], &KERNEL_SIZES).is_err());
}

#[test]
fn csv_layout() {
    let rows = mse_sweep(&[random_pair(8, 8, 6), random_pair(8, 8, 7)], &[1, 3]).unwrap();
    let csv = mse_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pair_id,d,mse");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("1,1,"));
    let v: f64 = lines[4].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(v, rows[3].mse);
}

/// One 3x3 conv whose filters 0 and 2 are identical and filter 1 differs.
fn duplicate_filter_net() -> Network<f64> {
    let spec: NetworkSpec = "input 1x9x9\nclasses 3\nconv out=3 k=3\navgpool\nflatten\n".parse().unwrap();
    let mut net = Network::<f64>::materialize(&spec, 0).unwrap();
    net.layer_mut(0).visit_params(&mut |name, p| {
        if name == "weight" {
            let (a, b) = p.value.split_at_mut(18);
            a[..9].copy_from_slice(&b[..9].to_vec());
        }
    });
    net
}

#[test]
fn harvest_ranks_duplicate_channels_first() {
    let net = duplicate_filter_net();
    let x = common::randn::<f64>(Shape::new(1, 1, 9, 9), &mut common::rng(8));
    let pairs = harvest_pairs(&net, &x, 0, 1).unwrap();
    assert_eq!(pairs.len(), 1);
    assert!((pairs[0].similarity.unwrap() - 1.0).abs() < 1e-12);
    assert!(pairs[0].tag.contains("channels=0,2"), "{}", pairs[0].tag);
    assert_eq!(pairs[0].source, pairs[0].target);
    assert!(mse_sweep(&pairs, &KERNEL_SIZES).unwrap().iter().all(|r| r.mse < 1e-10));

    let all = harvest_pairs(&net, &x, 0, 100).unwrap();
    assert_eq!(all.len(), 3);
    let sims: Vec<f64> = all.iter().map(|p| p.similarity.unwrap()).collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]));
    for p in &all {
        assert_eq!(p.similarity, ncc(&p.source, &p.target));
    }
}

#[test]
fn harvest_checks_the_layer() {
    let net = duplicate_filter_net();
    let x = Tensor::<f64>::zeros(Shape::new(1, 1, 9, 9)).unwrap();
    assert!(harvest_pairs(&net, &x, 7, 2).is_err());
    // the flattened output has no spatial maps
    assert!(harvest_pairs(&net, &x, 2, 2).is_err());
}

#[test]
fn ncc_of_constant_map_is_undefined() {
    assert_eq!(ncc(&[1.0, 1.0], &[0.0, 2.0]), None);
    assert!((ncc(&[1.0, 2.0, 3.0], &[-2.0, -4.0, -6.0]).unwrap() + 1.0).abs() < 1e-15);
}
