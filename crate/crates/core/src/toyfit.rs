//! Least-squares depthwise kernel fitting between pairs of feature maps.
//!
//! A `d×d` kernel is applied to the source as a cross-correlation with "same" zero
//! padding. The optimal kernel solves the `d²×d²` normal equations of the shifted-source
//! regressors.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::arch::Network;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const RIDGE: f64 = 1e-8;
pub const KERNEL_SIZES: [usize; 4] = [1, 3, 5, 7];

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub height: usize,
    pub width: usize,
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    /// Where the maps came from, e.g. `layer=3 sample=0 channels=4,9`.
    pub tag: String,
    /// Normalized cross-correlation of the two maps, when harvested.
    pub similarity: Option<f64>,
}

impl FeaturePair {
    pub fn new(height: usize, width: usize, source: Vec<f64>, target: Vec<f64>, tag: impl Into<String>) -> Result<Self> {
        let n = height * width;
        if n == 0 || source.len() != n || target.len() != n {
            return Err(Error::shape(format!(
                "pair maps must both hold {height}x{width} values, got {} and {}",
                source.len(),
                target.len()
            )));
        }
        if !source.iter().chain(&target).all(|v| v.is_finite()) {
            return Err(Error::config("pair maps contain non-finite values"));
        }
        Ok(FeaturePair {
            height,
            width,
            source,
            target,
            tag: tag.into(),
            similarity: None,
        })
    }

    fn shifted(&self, dy: isize, dx: isize, y: usize, x: usize) -> f64 {
        let sy = y as isize + dy;
        let sx = x as isize + dx;
        if sy < 0 || sx < 0 || sy >= self.height as isize || sx >= self.width as isize {
            0.0
        } else {
            self.source[sy as usize * self.width + sx as usize]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub d: usize,
    /// Row-major `d×d`.
    pub kernel: Vec<f64>,
    pub mse: f64,
    /// The normal matrix was singular and the ridge fallback was used.
    pub degenerate: bool,
}

/// Same-padded cross-correlation of a single map with a `d×d` kernel.
pub fn apply_kernel(source: &[f64], height: usize, width: usize, kernel: &[f64], d: usize) -> Vec<f64> {
    let r = (d / 2) as isize;
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for ky in 0..d {
                let sy = y as isize + ky as isize - r;
                if sy < 0 || sy >= height as isize {
                    continue;
                }
                for kx in 0..d {
                    let sx = x as isize + kx as isize - r;
                    if sx < 0 || sx >= width as isize {
                        continue;
                    }
                    acc += kernel[ky * d + kx] * source[sy as usize * width + sx as usize];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Regressor matrix with one column per kernel tap.
fn design(pair: &FeaturePair, d: usize) -> DMatrix<f64> {
    let r = (d / 2) as isize;
    let (h, w) = (pair.height, pair.width);
    DMatrix::from_fn(h * w, d * d, |row, col| {
        let (y, x) = (row / w, row % w);
        let (ky, kx) = ((col / d) as isize, (col % d) as isize);
        pair.shifted(ky - r, kx - r, y, x)
    })
}

/// Least-squares optimal `d×d` kernel mapping `pair.source` to `pair.target`.
pub fn fit_depthwise(pair: &FeaturePair, d: usize) -> Result<Fit> {
    if d % 2 == 0 || d == 0 {
        return Err(Error::config(format!("kernel size must be odd, got {d}")));
    }
    if d > pair.height.min(pair.width) {
        return Err(Error::config(format!(
            "kernel size {d} exceeds map size {}x{}",
            pair.height, pair.width
        )));
    }
    let x = design(pair, d);
    let t = DVector::from_column_slice(&pair.target);
    let a = x.transpose() * &x;
    let b = x.transpose() * &t;
    let (chol, degenerate) = match a.clone().cholesky() {
        Some(c) if a.diagonal().iter().all(|&v| v > 0.0) => (c, false),
        _ => {
            let ridged = &a + DMatrix::identity(d * d, d * d) * RIDGE;
            let c = ridged
                .cholesky()
                .ok_or_else(|| Error::config("normal matrix is singular even with ridge"))?;
            (c, true)
        }
    };
    let mut k = chol.solve(&b);
    if !degenerate {
        // one step of iterative refinement
        let r = &b - &a * &k;
        k += chol.solve(&r);
    }
    let fitted = &x * &k;
    let mse = (fitted - t).norm_squared() / pair.target.len() as f64;
    Ok(Fit {
        d,
        kernel: k.iter().copied().collect(),
        mse,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub pair_id: usize,
    pub d: usize,
    pub mse: f64,
}

/// Fits every pair at every kernel size.
pub fn mse_sweep(pairs: &[FeaturePair], ds: &[usize]) -> Result<Vec<MseRow>> {
    if pairs.is_empty() {
        return Err(Error::config("no feature pairs to fit"));
    }
    let mut rows = Vec::with_capacity(pairs.len() * ds.len());
    for (pair_id, p) in pairs.iter().enumerate() {
        for &d in ds {
            rows.push(MseRow {
                pair_id,
                d,
                mse: fit_depthwise(p, d)?.mse,
            });
        }
    }
    Ok(rows)
}

/// `pair_id,d,mse`
pub fn mse_csv(rows: &[MseRow]) -> String {
    let mut out = String::from("pair_id,d,mse\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:e}", r.pair_id, r.d, r.mse);
    }
    out
}

/// Normalized cross-correlation; `None` when either map is constant.
pub fn ncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma) * (x - ma);
        bb += (y - mb) * (y - mb);
    }
    (aa > 0.0 && bb > 0.0).then(|| ab / (aa * bb).sqrt())
}

/// Runs `input` through `net` and returns the `top_k` most similar channel pairs of
/// `layer`'s output for the first sample, ranked by normalized cross-correlation.
/// Constant channels are skipped.
pub fn harvest_pairs<T: Scalar>(net: &Network<T>, input: &Tensor<T>, layer: usize, top_k: usize) -> Result<Vec<FeaturePair>> {
    if layer >= net.len() {
        return Err(Error::config(format!(
            "layer {layer} out of range for a {}-layer network",
            net.len()
        )));
    }
    let trace = net.infer_trace(input)?;
    let out = &trace[layer];
    let s = out.shape();
    if s.channels < 2 || s.plane() < 2 {
        return Err(Error::config(format!(
            "layer {layer} output {s} needs at least two channels of spatial maps"
        )));
    }
    let maps: Vec<Vec<f64>> = (0..s.channels)
        .map(|c| out.plane(0, c).iter().map(|v| v.as_f64()).collect())
        .collect();
    let mut scored = Vec::new();
    for i in 0..s.channels {
        for j in i + 1..s.channels {
            if let Some(r) = ncc(&maps[i], &maps[j]) {
                scored.push((r, i, j));
            }
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    scored
        .into_iter()
        .take(top_k)
        .map(|(r, i, j)| {
            let tag = format!("layer={layer} sample=0 channels={i},{j}");
            let mut p = FeaturePair::new(s.height, s.width, maps[i].clone(), maps[j].clone(), tag)?;
            p.similarity = Some(r);
            Ok(p)
        })
        .collect()
}
