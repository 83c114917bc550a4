//! Declarative network specs and their line-oriented text format.
//!
//! ```text
//! # comments run to end of line
//! input 3x224x224
//! classes 1000
//! alpha 1.0
//! conv out=16 k=3 stride=2 pad=1 bias=0
//! bn
//! relu
//! gbneck exp=48 out=24 se=0 stride=2 s=2 d=3
//! avgpool
//! flatten
//! fc out=1000 bias=1
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Display};

use crate::error::{Error, Result};
use crate::ghost::{BottleneckConfig, GhostModuleConfig, SeConfig};
use crate::ops::{output_extent, Gate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhostSpec {
    pub out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub ratio: usize,
    pub cheap_kernel: usize,
    pub relu: bool,
    pub bn: bool,
    pub cheap_bn: bool,
    pub bias: bool,
}

impl GhostSpec {
    pub fn module_config(&self, in_channels: usize) -> GhostModuleConfig {
        GhostModuleConfig::new(in_channels, self.out, self.ratio, self.kernel, self.cheap_kernel)
            .with_stride(self.stride, self.padding)
            .with_relu(self.relu)
            .with_bn(self.bn, self.cheap_bn)
            .with_bias(self.bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BneckSpec {
    pub exp: usize,
    pub out: usize,
    pub stride: usize,
    pub se: bool,
    pub ratio: usize,
    pub cheap_kernel: usize,
    pub se_reduction: usize,
    pub gate: Gate,
}

impl BneckSpec {
    pub fn new(exp: usize, out: usize, se: bool, stride: usize) -> Self {
        let se_default = SeConfig::default();
        BneckSpec {
            exp,
            out,
            stride,
            se,
            ratio: 2,
            cheap_kernel: 3,
            se_reduction: se_default.reduction,
            gate: se_default.gate,
        }
    }

    pub fn block_config(&self, in_channels: usize) -> BottleneckConfig {
        BottleneckConfig {
            in_channels,
            expansion: self.exp,
            out_channels: self.out,
            stride: self.stride,
            se: self.se.then_some(SeConfig {
                reduction: self.se_reduction,
                gate: self.gate,
            }),
            ratio: self.ratio,
            cheap_kernel: self.cheap_kernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Ghost(GhostSpec),
    Bottleneck(BneckSpec),
    BatchNorm,
    Relu,
    /// `None` pools globally; otherwise `(kernel, stride)`.
    AvgPool(Option<(usize, usize)>),
    Fc { out: usize, bias: bool },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Ghost(_) => "ghost",
            LayerSpec::Bottleneck(_) => "gbneck",
            LayerSpec::BatchNorm => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::AvgPool(_) => "avgpool",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Flatten => "flatten",
        }
    }
}

/// Per-sample activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl Activation {
    pub fn channels(&self) -> usize {
        match *self {
            Activation::Spatial { channels, .. } => channels,
            Activation::Flat(f) => f,
        }
    }

    /// `(channels, height, width)`; flat vectors are `(features, 1, 1)`.
    pub fn chw(&self) -> (usize, usize, usize) {
        match *self {
            Activation::Spatial {
                channels,
                height,
                width,
            } => (channels, height, width),
            Activation::Flat(f) => (f, 1, 1),
        }
    }

    pub fn numel(&self) -> usize {
        let (c, h, w) = self.chw();
        c * h * w
    }
}

impl Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Spatial {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
            Activation::Flat(n) => write!(f, "flat {n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// `(channels, height, width)`
    pub input: (usize, usize, usize),
    pub num_classes: usize,
    pub width_multiplier: f64,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: (usize, usize, usize), num_classes: usize) -> Self {
        NetworkSpec {
            input,
            num_classes,
            width_multiplier: 1.0,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: LayerSpec) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input.1 = height;
        self.input.2 = width;
        self
    }

    pub fn input_activation(&self) -> Activation {
        Activation::Spatial {
            channels: self.input.0,
            height: self.input.1,
            width: self.input.2,
        }
    }

    /// Output activation of every layer, validating the whole chain.
    pub fn shapes(&self) -> Result<Vec<Activation>> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config("input dimensions must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::config(format!(
                "width multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        let mut cur = self.input_activation();
        let mut out = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            cur = next_activation(layer, cur).map_err(|e| Error::Spec {
                index,
                message: format!("{} on {cur}: {}", layer.kind(), strip(e)),
            })?;
            out.push(cur);
        }
        if cur != Activation::Flat(self.num_classes) {
            return Err(Error::Spec {
                index: self.layers.len() - 1,
                message: format!(
                    "network ends with {cur}, expected flat {} logits",
                    self.num_classes
                ),
            });
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Input activation of each layer (the previous layer's output).
    pub fn layer_inputs(&self) -> Result<Vec<Activation>> {
        let shapes = self.shapes()?;
        let mut inputs = vec![self.input_activation()];
        inputs.extend_from_slice(&shapes[..shapes.len() - 1]);
        Ok(inputs)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Shape(m) | Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn spatial(a: Activation) -> Result<(usize, usize, usize)> {
    match a {
        Activation::Spatial {
            channels,
            height,
            width,
        } => Ok((channels, height, width)),
        Activation::Flat(_) => Err(Error::shape("needs a spatial input; place it before flatten")),
    }
}

fn next_activation(layer: &LayerSpec, input: Activation) -> Result<Activation> {
    let sp = |channels, height, width| Activation::Spatial {
        channels,
        height,
        width,
    };
    match *layer {
        LayerSpec::Conv(c) => {
            let (_, h, w) = spatial(input)?;
            if c.out == 0 || c.kernel == 0 {
                return Err(Error::config("conv needs out >= 1 and k >= 1"));
            }
            Ok(sp(
                c.out,
                output_extent(h, c.kernel, c.stride, c.padding)?,
                output_extent(w, c.kernel, c.stride, c.padding)?,
            ))
        }
        LayerSpec::Ghost(g) => {
            let (cin, h, w) = spatial(input)?;
            g.module_config(cin).validate()?;
            Ok(sp(
                g.out,
                output_extent(h, g.kernel, g.stride, g.padding)?,
                output_extent(w, g.kernel, g.stride, g.padding)?,
            ))
        }
        LayerSpec::Bottleneck(b) => {
            let (cin, h, w) = spatial(input)?;
            b.block_config(cin).validate()?;
            let pad = (crate::ghost::bottleneck::DOWNSAMPLE_KERNEL - 1) / 2;
            let k = crate::ghost::bottleneck::DOWNSAMPLE_KERNEL;
            if b.stride == 2 {
                Ok(sp(b.out, output_extent(h, k, 2, pad)?, output_extent(w, k, 2, pad)?))
            } else {
                Ok(sp(b.out, h, w))
            }
        }
        LayerSpec::BatchNorm | LayerSpec::Relu => Ok(input),
        LayerSpec::AvgPool(window) => {
            let (c, h, w) = spatial(input)?;
            match window {
                None => Ok(sp(c, 1, 1)),
                Some((k, s)) => Ok(sp(c, output_extent(h, k, s, 0)?, output_extent(w, k, s, 0)?)),
            }
        }
        LayerSpec::Flatten => Ok(Activation::Flat(input.numel())),
        LayerSpec::Fc { out, .. } => match input {
            Activation::Flat(_) if out > 0 => Ok(Activation::Flat(out)),
            Activation::Flat(_) => Err(Error::config("fc needs out >= 1")),
            Activation::Spatial { .. } => Err(Error::shape("fc needs a flat input; add flatten first")),
        },
    }
}

// ---------------------------------------------------------------------------
// text format

fn b(v: bool) -> u8 {
    v as u8
}

impl Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv(c) => write!(
                f,
                "conv out={} k={} stride={} pad={} bias={}",
                c.out, c.kernel, c.stride, c.padding, b(c.bias)
            ),
            LayerSpec::Ghost(g) => write!(
                f,
                "ghost out={} k={} stride={} pad={} s={} d={} relu={} bn={} cheap_bn={} bias={}",
                g.out,
                g.kernel,
                g.stride,
                g.padding,
                g.ratio,
                g.cheap_kernel,
                b(g.relu),
                b(g.bn),
                b(g.cheap_bn),
                b(g.bias)
            ),
            LayerSpec::Bottleneck(n) => {
                write!(
                    f,
                    "gbneck exp={} out={} se={} stride={} s={} d={}",
                    n.exp,
                    n.out,
                    b(n.se),
                    n.stride,
                    n.ratio,
                    n.cheap_kernel
                )?;
                let d = SeConfig::default();
                if n.se && (n.se_reduction != d.reduction || n.gate != d.gate) {
                    write!(f, " se_r={} gate={}", n.se_reduction, n.gate.name())?;
                }
                Ok(())
            }
            LayerSpec::BatchNorm => f.write_str("bn"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::AvgPool(None) => f.write_str("avgpool"),
            LayerSpec::AvgPool(Some((k, s))) => write!(f, "avgpool k={k} stride={s}"),
            LayerSpec::Fc { out, bias } => write!(f, "fc out={out} bias={}", b(*bias)),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

impl Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (c, h, w) = self.input;
        writeln!(f, "input {c}x{h}x{w}")?;
        writeln!(f, "classes {}", self.num_classes)?;
        writeln!(f, "alpha {}", self.width_multiplier)?;
        for layer in &self.layers {
            writeln!(f, "{layer}")?;
        }
        Ok(())
    }
}

struct Args<'a> {
    map: BTreeMap<&'a str, &'a str>,
    line: usize,
    layer: usize,
}

impl<'a> Args<'a> {
    fn err(&self, msg: impl Display) -> Error {
        Error::Parse {
            line: self.line,
            message: format!("layer {}: {msg}", self.layer),
        }
    }

    fn take_usize(&mut self, key: &str, default: Option<usize>) -> Result<usize> {
        match self.map.remove(key) {
            Some(v) => v
                .parse()
                .map_err(|_| self.err(format!("`{key}` must be a non-negative integer, got `{v}`"))),
            None => default.ok_or_else(|| self.err(format!("missing `{key}=`"))),
        }
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.map.remove(key) {
            Some("1") | Some("true") => Ok(true),
            Some("0") | Some("false") => Ok(false),
            Some(v) => Err(self.err(format!("`{key}` must be 0 or 1, got `{v}`"))),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.map.keys().next() {
            return Err(self.err(format!("unknown key `{k}`")));
        }
        Ok(())
    }
}

fn parse_layer(kind: &str, mut a: Args<'_>) -> Result<LayerSpec> {
    let layer = match kind {
        "conv" => {
            let out = a.take_usize("out", None)?;
            let kernel = a.take_usize("k", None)?;
            let stride = a.take_usize("stride", Some(1))?;
            let padding = a.take_usize("pad", Some(kernel.saturating_sub(1) / 2))?;
            let bias = a.take_bool("bias", false)?;
            LayerSpec::Conv(ConvSpec {
                out,
                kernel,
                stride,
                padding,
                bias,
            })
        }
        "ghost" => {
            let out = a.take_usize("out", None)?;
            let kernel = a.take_usize("k", Some(1))?;
            let stride = a.take_usize("stride", Some(1))?;
            let padding = a.take_usize("pad", Some(kernel.saturating_sub(1) / 2))?;
            LayerSpec::Ghost(GhostSpec {
                out,
                kernel,
                stride,
                padding,
                ratio: a.take_usize("s", Some(2))?,
                cheap_kernel: a.take_usize("d", Some(3))?,
                relu: a.take_bool("relu", true)?,
                bn: a.take_bool("bn", true)?,
                cheap_bn: a.take_bool("cheap_bn", true)?,
                bias: a.take_bool("bias", false)?,
            })
        }
        "gbneck" => {
            let exp = a.take_usize("exp", None)?;
            let out = a.take_usize("out", None)?;
            let se = a.take_bool("se", false)?;
            let stride = a.take_usize("stride", Some(1))?;
            let mut spec = BneckSpec::new(exp, out, se, stride);
            spec.ratio = a.take_usize("s", Some(2))?;
            spec.cheap_kernel = a.take_usize("d", Some(3))?;
            spec.se_reduction = a.take_usize("se_r", Some(spec.se_reduction))?;
            if spec.se_reduction == 0 {
                return Err(a.err("`se_r` must be at least 1"));
            }
            if let Some(g) = a.map.remove("gate") {
                spec.gate = Gate::from_name(g)
                    .ok_or_else(|| a.err(format!("unknown gate `{g}` (hsig | sigmoid)")))?;
            }
            LayerSpec::Bottleneck(spec)
        }
        "bn" => LayerSpec::BatchNorm,
        "relu" => LayerSpec::Relu,
        "flatten" => LayerSpec::Flatten,
        "avgpool" => {
            if a.map.is_empty() {
                LayerSpec::AvgPool(None)
            } else {
                let k = a.take_usize("k", None)?;
                let s = a.take_usize("stride", Some(k))?;
                LayerSpec::AvgPool(Some((k, s)))
            }
        }
        "fc" => LayerSpec::Fc {
            out: a.take_usize("out", None)?,
            bias: a.take_bool("bias", true)?,
        },
        other => return Err(a.err(format!("unknown layer kind `{other}`"))),
    };
    a.finish()?;
    Ok(layer)
}

impl std::str::FromStr for NetworkSpec {
    type Err = Error;

    /// Parses the text format. Shape validation is separate: see [`NetworkSpec::validate`].
    fn from_str(text: &str) -> Result<Self> {
        let mut input = None;
        let mut classes = None;
        let mut alpha = 1.0;
        let mut layers = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let head = toks.next().unwrap();
            let perr = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            match head {
                "input" => {
                    let v = toks.next().ok_or_else(|| perr("expected `input CxHxW`".into()))?;
                    let dims: Vec<usize> = v
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| perr(format!("bad input dims `{v}`")))?;
                    if dims.len() != 3 {
                        return Err(perr(format!("input needs CxHxW, got `{v}`")));
                    }
                    input = Some((dims[0], dims[1], dims[2]));
                }
                "classes" => {
                    let v = toks.next().ok_or_else(|| perr("expected `classes N`".into()))?;
                    classes = Some(v.parse().map_err(|_| perr(format!("bad class count `{v}`")))?);
                }
                "alpha" => {
                    let v = toks.next().ok_or_else(|| perr("expected `alpha F`".into()))?;
                    alpha = v.parse().map_err(|_| perr(format!("bad alpha `{v}`")))?;
                }
                kind => {
                    let mut map = BTreeMap::new();
                    for tok in toks {
                        let (k, v) = tok.split_once('=').ok_or_else(|| {
                            perr(format!("layer {}: expected key=value, got `{tok}`", layers.len()))
                        })?;
                        if map.insert(k, v).is_some() {
                            return Err(perr(format!("layer {}: duplicate key `{k}`", layers.len())));
                        }
                    }
                    let args = Args {
                        map,
                        line: line_no,
                        layer: layers.len(),
                    };
                    layers.push(parse_layer(kind, args)?);
                }
            }
        }
        let input = input.ok_or(Error::Parse {
            line: 1,
            message: "missing `input CxHxW` line".into(),
        })?;
        let num_classes = classes.ok_or(Error::Parse {
            line: 1,
            message: "missing `classes N` line".into(),
        })?;
        Ok(NetworkSpec {
            input,
            num_classes,
            width_multiplier: alpha,
            layers,
        })
    }
}
