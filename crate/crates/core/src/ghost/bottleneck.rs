//! Ghost bottleneck: expand with one Ghost module, optionally downsample with a
//! stride-2 depthwise conv, optionally gate with SE, project with a second Ghost
//! module (no ReLU), and add the shortcut.

use crate::error::{Error, Result};
use crate::instrument;
use crate::layer::{missing_cache, visit_child, visit_child_ref, Layer, Mode, Param, Rng};
use crate::ops::{BatchNorm2d, Conv2d, DepthwiseConv2d};
use crate::tensor::{Scalar, Shape, Tensor};

use super::module::{GhostModule, GhostModuleConfig};
use super::se::{SeBlock, SeConfig};

/// Kernel of the stride-2 depthwise layers (main path and shortcut).
pub const DOWNSAMPLE_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BottleneckConfig {
    pub in_channels: usize,
    /// `#exp`
    pub expansion: usize,
    /// `#out`
    pub out_channels: usize,
    pub stride: usize,
    pub se: Option<SeConfig>,
    pub ratio: usize,
    pub cheap_kernel: usize,
}

impl BottleneckConfig {
    /// Ghost modules with `s = 2`, `d = 3`, pointwise primary convolutions.
    pub fn new(in_channels: usize, expansion: usize, out_channels: usize, stride: usize, se: bool) -> Self {
        BottleneckConfig {
            in_channels,
            expansion,
            out_channels,
            stride,
            se: se.then(SeConfig::default),
            ratio: 2,
            cheap_kernel: 3,
        }
    }

    pub fn ghost1(&self) -> GhostModuleConfig {
        GhostModuleConfig::new(self.in_channels, self.expansion, self.ratio, 1, self.cheap_kernel)
    }

    pub fn ghost2(&self) -> GhostModuleConfig {
        GhostModuleConfig::new(self.expansion, self.out_channels, self.ratio, 1, self.cheap_kernel)
            .with_relu(false)
    }

    pub fn identity_shortcut(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.stride) {
            return Err(Error::config(format!(
                "bottleneck stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        self.ghost1().validate()?;
        self.ghost2().validate()
    }
}

/// Depthwise conv + BN, used for the stride-2 step.
#[derive(Debug, Clone)]
pub struct Downsample<T> {
    pub conv: DepthwiseConv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Scalar> Downsample<T> {
    fn new(channels: usize, stride: usize) -> Self {
        let k = DOWNSAMPLE_KERNEL;
        Downsample {
            conv: DepthwiseConv2d::new(channels, k, stride, (k - 1) / 2),
            bn: BatchNorm2d::new(channels),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, mode)?;
        self.bn.forward(&y, mode)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.bn.backward(grad)?;
        self.conv.backward(&g)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.bn.infer(&self.conv.infer(x)?)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        visit_child(&format!("{prefix}.conv"), &mut self.conv, f);
        visit_child(&format!("{prefix}.bn"), &mut self.bn, f);
    }

    fn visit_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        visit_child_ref(&format!("{prefix}.conv"), &self.conv, f);
        visit_child_ref(&format!("{prefix}.bn"), &self.bn, f);
    }
}

#[derive(Debug, Clone)]
pub enum Shortcut<T> {
    Identity,
    /// Optional stride-2 depthwise + BN, then pointwise conv + BN.
    Projection {
        down: Option<Downsample<T>>,
        conv: Conv2d<T>,
        bn: BatchNorm2d<T>,
    },
}

#[derive(Debug, Clone)]
pub struct GhostBottleneck<T> {
    pub config: BottleneckConfig,
    pub ghost1: GhostModule<T>,
    pub mid: Option<Downsample<T>>,
    pub se: Option<SeBlock<T>>,
    pub ghost2: GhostModule<T>,
    pub shortcut: Shortcut<T>,
}

impl<T: Scalar> GhostBottleneck<T> {
    pub fn new(config: BottleneckConfig) -> Result<Self> {
        config.validate()?;
        let shortcut = if config.identity_shortcut() {
            Shortcut::Identity
        } else {
            Shortcut::Projection {
                down: (config.stride == 2).then(|| Downsample::new(config.in_channels, 2)),
                conv: Conv2d::new(config.in_channels, config.out_channels, 1, 1, 0, false),
                bn: BatchNorm2d::new(config.out_channels),
            }
        };
        Ok(GhostBottleneck {
            config,
            ghost1: GhostModule::new(config.ghost1())?,
            mid: (config.stride == 2).then(|| Downsample::new(config.expansion, 2)),
            se: config.se.map(|se| SeBlock::new(config.expansion, se)),
            ghost2: GhostModule::new(config.ghost2())?,
            shortcut,
        })
    }

    pub fn init(mut self, rng: &mut Rng) -> Self {
        self.ghost1 = self.ghost1.init(rng);
        if let Some(mid) = &mut self.mid {
            mid.conv = mid.conv.clone().init(rng);
        }
        self.se = self.se.map(|se| se.init(rng));
        self.ghost2 = self.ghost2.init(rng);
        if let Shortcut::Projection { down, conv, .. } = &mut self.shortcut {
            if let Some(d) = down {
                d.conv = d.conv.clone().init(rng);
            }
            *conv = conv.clone().init(rng);
        }
        self
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.config.in_channels {
            return Err(Error::shape(format!(
                "bottleneck expects {} channels, got {}",
                self.config.in_channels, input.channels
            )));
        }
        let mut s = self.ghost1.output_shape(input)?;
        if let Some(mid) = &self.mid {
            s = mid.conv.output_shape(s)?;
        }
        self.ghost2.output_shape(s)
    }
}

fn residual_add<T: Scalar>(main: &Tensor<T>, shortcut: &Tensor<T>) -> Result<Tensor<T>> {
    if main.shape() != shortcut.shape() {
        return Err(Error::shape(format!(
            "main path {} and shortcut {} disagree",
            main.shape(),
            shortcut.shape()
        )));
    }
    instrument::record_aux(main.len());
    main.add(shortcut)
}

impl<T: Scalar> Layer<T> for GhostBottleneck<T> {
    fn kind(&self) -> &'static str {
        "gbneck"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.ghost1.forward(x, mode)?;
        if let Some(mid) = &mut self.mid {
            h = mid.forward(&h, mode)?;
        }
        if let Some(se) = &mut self.se {
            h = se.forward(&h, mode)?;
        }
        h = self.ghost2.forward(&h, mode)?;
        let sc = match &mut self.shortcut {
            Shortcut::Identity => x.clone(),
            Shortcut::Projection { down, conv, bn } => {
                let mut s = x.clone();
                if let Some(d) = down {
                    s = d.forward(&s, mode)?;
                }
                bn.forward(&conv.forward(&s, mode)?, mode)?
            }
        };
        residual_add(&h, &sc)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.ghost2.backward(grad)?;
        if let Some(se) = &mut self.se {
            g = se.backward(&g)?;
        }
        if let Some(mid) = &mut self.mid {
            g = mid.backward(&g)?;
        }
        let dx_main = self.ghost1.backward(&g)?;
        let dx_short = match &mut self.shortcut {
            Shortcut::Identity => grad.clone(),
            Shortcut::Projection { down, conv, bn } => {
                let mut s = conv.backward(&bn.backward(grad)?)?;
                if let Some(d) = down {
                    s = d.backward(&s)?;
                }
                s
            }
        };
        if dx_main.shape() != dx_short.shape() {
            return Err(missing_cache("gbneck"));
        }
        dx_main.add(&dx_short)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.ghost1.infer(x)?;
        if let Some(mid) = &self.mid {
            h = mid.infer(&h)?;
        }
        if let Some(se) = &self.se {
            h = se.infer(&h)?;
        }
        h = self.ghost2.infer(&h)?;
        let sc = match &self.shortcut {
            Shortcut::Identity => x.clone(),
            Shortcut::Projection { down, conv, bn } => {
                let s = match down {
                    Some(d) => d.infer(x)?,
                    None => x.clone(),
                };
                bn.infer(&conv.infer(&s)?)?
            }
        };
        residual_add(&h, &sc)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        visit_child("ghost1", &mut self.ghost1, f);
        if let Some(mid) = &mut self.mid {
            mid.visit("mid", f);
        }
        if let Some(se) = &mut self.se {
            visit_child("se", se, f);
        }
        visit_child("ghost2", &mut self.ghost2, f);
        if let Shortcut::Projection { down, conv, bn } = &mut self.shortcut {
            if let Some(d) = down {
                d.visit("shortcut.down", f);
            }
            visit_child("shortcut.conv", conv, f);
            visit_child("shortcut.bn", bn, f);
        }
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        visit_child_ref("ghost1", &self.ghost1, f);
        if let Some(mid) = &self.mid {
            mid.visit_ref("mid", f);
        }
        if let Some(se) = &self.se {
            visit_child_ref("se", se, f);
        }
        visit_child_ref("ghost2", &self.ghost2, f);
        if let Shortcut::Projection { down, conv, bn } = &self.shortcut {
            if let Some(d) = down {
                d.visit_ref("shortcut.down", f);
            }
            visit_child_ref("shortcut.conv", conv, f);
            visit_child_ref("shortcut.bn", bn, f);
        }
    }
}
