//! Static parameter and MAC accounting.
//!
//! One FLOP is one multiply-accumulate. Convolutions and fully connected layers make up
//! the headline figure; BN, activations, pooling, residual adds and everything inside
//! SE blocks go to the auxiliary column. All counts are per sample.

use std::fmt::Write as _;

use num_rational::Ratio;

use crate::arch::{Activation, BneckSpec, GhostSpec, LayerSpec, NetworkSpec};
use crate::error::Result;
use crate::ghost::bottleneck::DOWNSAMPLE_KERNEL;
use crate::ghost::SeConfig;

/// `n·h'·w'·c·k²`
pub fn flops_conv(n: u64, h: u64, w: u64, c: u64, k: u64) -> u64 {
    n * h * w * c * k * k
}

/// Primary conv plus cheap depthwise MACs of a Ghost module: with `m = ceil(n/s)`,
/// `m·h'·w'·c·k² + (s-1)·m·h'·w'·d²`.
pub fn flops_ghost_module(n: u64, h: u64, w: u64, c: u64, k: u64, s: u64, d: u64) -> u64 {
    let m = n.div_ceil(s);
    m * h * w * c * k * k + (s - 1) * m * h * w * d * d
}

/// `c·k² / (c·k²/s + (s-1)·d²/s)`, exact.
pub fn speedup_ratio_exact(c: u64, k: u64, d: u64, s: u64) -> Ratio<u64> {
    let ck2 = c * k * k;
    Ratio::new(s * ck2, ck2 + (s - 1) * d * d)
}

/// `n·c·k² / ((n/s)·c·k² + (s-1)·(n/s)·d²)`, exact; `n` cancels.
pub fn compression_ratio_exact(c: u64, k: u64, d: u64, s: u64) -> Ratio<u64> {
    let ck2 = c * k * k;
    Ratio::new(s * ck2, ck2 + (s - 1) * d * d)
}

pub fn speedup_ratio(c: u64, k: u64, d: u64, s: u64) -> f64 {
    ratio_f64(speedup_ratio_exact(c, k, d, s))
}

pub fn compression_ratio(c: u64, k: u64, d: u64, s: u64) -> f64 {
    ratio_f64(compression_ratio_exact(c, k, d, s))
}

pub fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Cost of one spec layer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerCost {
    pub index: usize,
    pub name: String,
    /// Trainable parameters, including the BN and bias entries below.
    pub params: u64,
    pub bn_params: u64,
    pub bias_params: u64,
    pub flops_mac: u64,
    pub flops_aux: u64,
}

impl LayerCost {
    fn add(&mut self, o: &LayerCost) {
        self.params += o.params;
        self.bn_params += o.bn_params;
        self.bias_params += o.bias_params;
        self.flops_mac += o.flops_mac;
        self.flops_aux += o.flops_aux;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Totals {
    pub params: u64,
    pub bn_params: u64,
    pub bias_params: u64,
    pub flops_mac: u64,
    pub flops_aux: u64,
}

impl Totals {
    /// Headline FLOPs counting multiplies and adds separately.
    pub fn flops_muladd(&self) -> u64 {
        2 * self.flops_mac
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    /// Input `(channels, height, width)` the counts refer to.
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn totals(&self) -> Totals {
        self.layers.iter().fold(Totals::default(), |t, l| Totals {
            params: t.params + l.params,
            bn_params: t.bn_params + l.bn_params,
            bias_params: t.bias_params + l.bias_params,
            flops_mac: t.flops_mac + l.flops_mac,
            flops_aux: t.flops_aux + l.flops_aux,
        })
    }

    /// `params=<N> flops=<N>`
    pub fn summary_line(&self) -> String {
        let t = self.totals();
        format!("params={} flops={}", t.params, t.flops_mac)
    }

    /// Secondary totals: mul+add FLOPs, auxiliary MACs and the BN/bias share of params.
    pub fn detail_line(&self) -> String {
        let t = self.totals();
        format!(
            "flops_muladd={} flops_aux={} bn_params={} bias_params={}",
            t.flops_muladd(),
            t.flops_aux,
            t.bn_params,
            t.bias_params
        )
    }

    /// `layer,name,params,flops_mac,flops_aux`, one row per layer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,name,params,flops_mac,flops_aux\n");
        for l in &self.layers {
            let _ = writeln!(out, "{},{},{},{},{}", l.index, l.name, l.params, l.flops_mac, l.flops_aux);
        }
        out
    }
}

fn conv_cost(cin: usize, out: Activation, cout: usize, k: usize, bias: bool) -> LayerCost {
    let (_, h, w) = out.chw();
    let bias_params = if bias { cout as u64 } else { 0 };
    LayerCost {
        params: (cout * cin * k * k) as u64 + bias_params,
        bias_params,
        flops_mac: flops_conv(cout as u64, h as u64, w as u64, cin as u64, k as u64),
        ..LayerCost::default()
    }
}

fn bn_cost(act: Activation) -> LayerCost {
    let c = act.channels() as u64;
    LayerCost {
        params: 2 * c,
        bn_params: 2 * c,
        flops_aux: act.numel() as u64,
        ..LayerCost::default()
    }
}

fn aux_cost(n: usize) -> LayerCost {
    LayerCost {
        flops_aux: n as u64,
        ..LayerCost::default()
    }
}

fn fc_cost(fin: usize, fout: usize, bias: bool) -> LayerCost {
    let bias_params = if bias { fout as u64 } else { 0 };
    LayerCost {
        params: (fin * fout) as u64 + bias_params,
        bias_params,
        flops_mac: (fin * fout) as u64,
        ..LayerCost::default()
    }
}

fn spatial(c: usize, h: usize, w: usize) -> Activation {
    Activation::Spatial {
        channels: c,
        height: h,
        width: w,
    }
}

fn ghost_cost(g: &GhostSpec, cin: usize, out: Activation) -> LayerCost {
    let cfg = g.module_config(cin);
    let (m, cheap) = (cfg.intrinsic_channels(), cfg.cheap_channels());
    let (_, h, w) = out.chw();
    let mut total = conv_cost(cin, spatial(m, h, w), m, g.kernel, g.bias);
    let intrinsic = spatial(m, h, w);
    if g.bn {
        total.add(&bn_cost(intrinsic));
    }
    if g.relu {
        total.add(&aux_cost(intrinsic.numel()));
    }
    if cheap > 0 {
        let ghosts = spatial(cheap, h, w);
        let d = g.cheap_kernel;
        total.add(&LayerCost {
            params: (cheap * d * d) as u64,
            flops_mac: (cheap * h * w * d * d) as u64,
            ..LayerCost::default()
        });
        if g.cheap_bn {
            total.add(&bn_cost(ghosts));
        }
        if g.relu {
            total.add(&aux_cost(ghosts.numel()));
        }
    }
    total
}

fn se_cost(c: usize, h: usize, w: usize, se: SeConfig) -> LayerCost {
    let r = se.reduced_width(c);
    let mut fc = fc_cost(c, r, true);
    fc.add(&fc_cost(r, c, true));
    LayerCost {
        params: fc.params,
        bias_params: fc.bias_params,
        // pool, both FCs, hidden ReLU, gate, scale
        flops_aux: (c * h * w + c * r + r * c + r + c + c * h * w) as u64,
        ..LayerCost::default()
    }
}

fn downsample_cost(c: usize, out: Activation) -> LayerCost {
    let (_, h, w) = out.chw();
    let k = DOWNSAMPLE_KERNEL;
    let mut t = LayerCost {
        params: (c * k * k) as u64,
        flops_mac: (c * h * w * k * k) as u64,
        ..LayerCost::default()
    };
    t.add(&bn_cost(spatial(c, h, w)));
    t
}

fn bottleneck_cost(b: &BneckSpec, input: Activation, out: Activation) -> LayerCost {
    let cfg = b.block_config(input.channels());
    let (cin, h, w) = input.chw();
    let (_, oh, ow) = out.chw();
    let as_ghost = |gc: crate::ghost::GhostModuleConfig| GhostSpec {
        out: gc.out_channels,
        kernel: gc.kernel,
        stride: gc.stride,
        padding: gc.padding,
        ratio: gc.ratio,
        cheap_kernel: gc.cheap_kernel,
        relu: gc.use_relu,
        bn: gc.primary_bn,
        cheap_bn: gc.cheap_bn,
        bias: gc.bias,
    };
    let mut t = ghost_cost(&as_ghost(cfg.ghost1()), cin, spatial(b.exp, h, w));
    if b.stride == 2 {
        t.add(&downsample_cost(b.exp, out));
    }
    if let Some(se) = cfg.se {
        t.add(&se_cost(b.exp, oh, ow, se));
    }
    t.add(&ghost_cost(&as_ghost(cfg.ghost2()), b.exp, out));
    if !cfg.identity_shortcut() {
        if b.stride == 2 {
            t.add(&downsample_cost(cin, out));
        }
        t.add(&conv_cost(cin, out, b.out, 1, false));
        t.add(&bn_cost(out));
    }
    t.add(&aux_cost(out.numel()));
    t
}

fn layer_cost(layer: &LayerSpec, input: Activation, out: Activation) -> LayerCost {
    match *layer {
        LayerSpec::Conv(c) => conv_cost(input.channels(), out, c.out, c.kernel, c.bias),
        LayerSpec::Ghost(g) => ghost_cost(&g, input.channels(), out),
        LayerSpec::Bottleneck(b) => bottleneck_cost(&b, input, out),
        LayerSpec::BatchNorm => bn_cost(input),
        LayerSpec::Relu => aux_cost(input.numel()),
        LayerSpec::AvgPool(None) => aux_cost(input.numel()),
        LayerSpec::AvgPool(Some((k, _))) => aux_cost(out.numel() * k * k),
        LayerSpec::Fc { out: fout, bias } => fc_cost(input.channels(), fout, bias),
        LayerSpec::Flatten => LayerCost::default(),
    }
}

/// Per-layer counts at the spec's own input size.
pub fn analyze(spec: &NetworkSpec) -> Result<CostReport> {
    let inputs = spec.layer_inputs()?;
    let outputs = spec.shapes()?;
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerCost {
            index: i,
            name: l.kind().to_string(),
            ..layer_cost(l, inputs[i], outputs[i])
        })
        .collect();
    Ok(CostReport {
        input: spec.input,
        layers,
    })
}

/// Parameter counts. They do not depend on the input size.
pub fn count_params(spec: &NetworkSpec) -> Result<CostReport> {
    analyze(spec)
}

/// Counts with the spatial input replaced by `height × width`.
pub fn count_flops(spec: &NetworkSpec, height: usize, width: usize) -> Result<CostReport> {
    analyze(&spec.clone().with_input_size(height, width))
}

/// Conv-vs-Ghost formula inputs `(c, k, d, s)` when `a` is a conv and `b` a Ghost module
/// with the same width, kernel and stride.
fn theory_pair(a: &LayerSpec, b: &LayerSpec, cin: usize) -> Option<(u64, u64, u64, u64)> {
    match (a, b) {
        (LayerSpec::Conv(c), LayerSpec::Ghost(g))
            if c.out == g.out && c.kernel == g.kernel && c.stride == g.stride =>
        {
            Some((cin as u64, c.kernel as u64, g.cheap_kernel as u64, g.ratio as u64))
        }
        _ => None,
    }
}

fn ratio(a: u64, b: u64) -> String {
    if b == 0 {
        if a == 0 { "1".into() } else { "inf".into() }
    } else {
        format!("{}", a as f64 / b as f64)
    }
}

/// Baseline-vs-variant table: counted values, counted ratios and, for conv layers that
/// became Ghost modules, the theoretical speed-up and compression.
pub fn compare(a: &NetworkSpec, b: &NetworkSpec) -> Result<Comparison> {
    let ra = analyze(a)?;
    let rb = analyze(b)?;
    let inputs = a.layer_inputs()?;
    let theory = if a.layers.len() == b.layers.len() {
        a.layers
            .iter()
            .zip(&b.layers)
            .zip(&inputs)
            .map(|((la, lb), act)| theory_pair(la, lb, act.channels()))
            .collect()
    } else {
        Vec::new()
    };
    Ok(Comparison {
        baseline: ra,
        variant: rb,
        theory,
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub baseline: CostReport,
    pub variant: CostReport,
    /// Per-layer `(c, k, d, s)` where the theoretical ratios apply; empty when the
    /// two specs have different depths.
    pub theory: Vec<Option<(u64, u64, u64, u64)>>,
}

impl Comparison {
    /// Counted baseline/variant headline FLOPs.
    pub fn flops_ratio(&self) -> f64 {
        let (a, b) = (self.baseline.totals(), self.variant.totals());
        a.flops_mac as f64 / b.flops_mac as f64
    }

    pub fn params_ratio(&self) -> f64 {
        let (a, b) = (self.baseline.totals(), self.variant.totals());
        a.params as f64 / b.params as f64
    }

    /// `layer,name_a,name_b,params_a,params_b,flops_a,flops_b,params_ratio,flops_ratio,theory_speedup,theory_compression`
    /// per aligned layer, then a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,name_a,name_b,params_a,params_b,flops_a,flops_b,params_ratio,flops_ratio,theory_speedup,theory_compression\n",
        );
        let rows = self.baseline.layers.len().max(self.variant.layers.len());
        let blank = LayerCost::default();
        for i in 0..rows {
            let la = self.baseline.layers.get(i).unwrap_or(&blank);
            let lb = self.variant.layers.get(i).unwrap_or(&blank);
            let (ts, tc) = match self.theory.get(i).copied().flatten() {
                Some((c, k, d, s)) => (
                    format!("{}", speedup_ratio(c, k, d, s)),
                    format!("{}", compression_ratio(c, k, d, s)),
                ),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{},{ts},{tc}",
                la.name,
                lb.name,
                la.params,
                lb.params,
                la.flops_mac,
                lb.flops_mac,
                ratio(la.params, lb.params),
                ratio(la.flops_mac, lb.flops_mac),
            );
        }
        let (a, b) = (self.baseline.totals(), self.variant.totals());
        let _ = writeln!(
            out,
            "total,,,{},{},{},{},{},{},,",
            a.params,
            b.params,
            a.flops_mac,
            b.flops_mac,
            ratio(a.params, b.params),
            ratio(a.flops_mac, b.flops_mac)
        );
        out
    }
}
