//! Ghost module: a thin primary convolution produces `m = ceil(n / s)` intrinsic maps,
//! a depthwise "cheap" convolution derives `(s - 1)·m` ghost maps from them, and the
//! intrinsic maps pass through unchanged as the identity branch. The concatenation
//! `[intrinsic, ghosts]` is truncated to `n` channels.

use crate::error::{Error, Result};
use crate::layer::{missing_cache, visit_child, visit_child_ref, Layer, Mode, Param, Rng};
use crate::ops::{relu_backward, relu_forward, BatchNorm2d, Conv2d, DepthwiseConv2d};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhostModuleConfig {
    pub in_channels: usize,
    /// `n`
    pub out_channels: usize,
    /// `s`
    pub ratio: usize,
    /// `k`, primary convolution kernel
    pub kernel: usize,
    /// `d`, cheap depthwise kernel
    pub cheap_kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub use_relu: bool,
    pub primary_bn: bool,
    pub cheap_bn: bool,
    pub bias: bool,
}

impl GhostModuleConfig {
    /// Stride 1, "same" padding, BN on both branches, ReLU on, no bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        ratio: usize,
        kernel: usize,
        cheap_kernel: usize,
    ) -> Self {
        GhostModuleConfig {
            in_channels,
            out_channels,
            ratio,
            kernel,
            cheap_kernel,
            stride: 1,
            padding: kernel.saturating_sub(1) / 2,
            use_relu: true,
            primary_bn: true,
            cheap_bn: true,
            bias: false,
        }
    }

    pub fn with_relu(mut self, on: bool) -> Self {
        self.use_relu = on;
        self
    }

    pub fn with_bn(mut self, primary: bool, cheap: bool) -> Self {
        self.primary_bn = primary;
        self.cheap_bn = cheap;
        self
    }

    pub fn with_stride(mut self, stride: usize, padding: usize) -> Self {
        self.stride = stride;
        self.padding = padding;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    /// `m`
    pub fn intrinsic_channels(&self) -> usize {
        self.out_channels.div_ceil(self.ratio.max(1))
    }

    /// Width of the cheap depthwise layer, `m·(s - 1)`.
    pub fn cheap_channels(&self) -> usize {
        self.intrinsic_channels() * (self.ratio - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, s) = (self.out_channels, self.ratio);
        if n == 0 || self.in_channels == 0 {
            return Err(Error::config("ghost module needs at least one input and output channel"));
        }
        if s == 0 || s > n {
            return Err(Error::config(format!(
                "ghost ratio s={s} must satisfy 1 <= s <= n={n}"
            )));
        }
        if self.kernel % 2 == 0 || self.cheap_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "kernel sizes must be odd (k={}, d={})",
                self.kernel, self.cheap_kernel
            )));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Cache<T> {
    intrinsic: Tensor<T>,
    ghosts: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct GhostModule<T> {
    pub config: GhostModuleConfig,
    pub primary: Conv2d<T>,
    pub primary_bn: Option<BatchNorm2d<T>>,
    pub cheap: Option<DepthwiseConv2d<T>>,
    pub cheap_bn: Option<BatchNorm2d<T>>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> GhostModule<T> {
    /// Zero-weight module; call [`GhostModule::init`] for random weights.
    pub fn new(config: GhostModuleConfig) -> Result<Self> {
        config.validate()?;
        let m = config.intrinsic_channels();
        let cheap_width = config.cheap_channels();
        Ok(GhostModule {
            config,
            primary: Conv2d::new(
                config.in_channels,
                m,
                config.kernel,
                config.stride,
                config.padding,
                config.bias,
            ),
            primary_bn: config.primary_bn.then(|| BatchNorm2d::new(m)),
            cheap: (cheap_width > 0).then(|| DepthwiseConv2d::same(cheap_width, config.cheap_kernel)),
            cheap_bn: (cheap_width > 0 && config.cheap_bn).then(|| BatchNorm2d::new(cheap_width)),
            cache: None,
        })
    }

    pub fn init(mut self, rng: &mut Rng) -> Self {
        self.primary = self.primary.init(rng);
        self.cheap = self.cheap.map(|c| c.init(rng));
        self
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let p = self.primary.output_shape(input)?;
        Ok(Shape::new(p.batch, self.config.out_channels, p.height, p.width))
    }

    fn finish(&self, intrinsic: &Tensor<T>, ghosts: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let n = self.config.out_channels;
        match ghosts {
            None => Ok(intrinsic.clone()),
            Some(g) => Tensor::concat_channels(&[intrinsic, g])?.narrow_channels(0, n),
        }
    }
}

/// `copies` back-to-back copies along channels; ghost channel `j` reads intrinsic `j mod m`.
fn tile<T: Scalar>(intrinsic: &Tensor<T>, copies: usize) -> Result<Tensor<T>> {
    Tensor::concat_channels(&vec![intrinsic; copies])
}

impl<T: Scalar> Layer<T> for GhostModule<T> {
    fn kind(&self) -> &'static str {
        "ghost"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut y = self.primary.forward(x, mode)?;
        if let Some(bn) = &mut self.primary_bn {
            y = bn.forward(&y, mode)?;
        }
        if self.config.use_relu {
            y = relu_forward(&y);
        }
        let ghosts = match &mut self.cheap {
            None => None,
            Some(cheap) => {
                let tiled = tile(&y, self.config.ratio - 1)?;
                let mut g = cheap.forward(&tiled, mode)?;
                if let Some(bn) = &mut self.cheap_bn {
                    g = bn.forward(&g, mode)?;
                }
                if self.config.use_relu {
                    g = relu_forward(&g);
                }
                Some(g)
            }
        };
        let out = self.finish(&y, ghosts.as_ref())?;
        self.cache = Some(Cache {
            intrinsic: y,
            ghosts,
        });
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("ghost"))?;
        let m = self.config.intrinsic_channels();
        let full_width = m + self.config.cheap_channels();
        // truncation backward: dropped ghost channels receive zero gradient
        let full = grad.pad_channels(0, full_width)?;
        let mut d_intrinsic = full.narrow_channels(0, m)?;

        if let (Some(cheap), Some(ghosts)) = (&mut self.cheap, &cache.ghosts) {
            let mut dg = full.narrow_channels(m, self.config.cheap_channels())?;
            if self.config.use_relu {
                dg = relu_backward(ghosts, &dg)?;
            }
            if let Some(bn) = &mut self.cheap_bn {
                dg = bn.backward(&dg)?;
            }
            let d_tiled = cheap.backward(&dg)?;
            for j in 0..self.config.ratio - 1 {
                d_intrinsic = d_intrinsic.add(&d_tiled.narrow_channels(j * m, m)?)?;
            }
        }

        if self.config.use_relu {
            d_intrinsic = relu_backward(&cache.intrinsic, &d_intrinsic)?;
        }
        if let Some(bn) = &mut self.primary_bn {
            d_intrinsic = bn.backward(&d_intrinsic)?;
        }
        self.primary.backward(&d_intrinsic)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.primary.infer(x)?;
        if let Some(bn) = &self.primary_bn {
            y = bn.infer(&y)?;
        }
        if self.config.use_relu {
            y = relu_forward(&y);
        }
        let ghosts = match &self.cheap {
            None => None,
            Some(cheap) => {
                let mut g = cheap.infer(&tile(&y, self.config.ratio - 1)?)?;
                if let Some(bn) = &self.cheap_bn {
                    g = bn.infer(&g)?;
                }
                if self.config.use_relu {
                    g = relu_forward(&g);
                }
                Some(g)
            }
        };
        self.finish(&y, ghosts.as_ref())
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        visit_child("primary", &mut self.primary, f);
        if let Some(bn) = &mut self.primary_bn {
            visit_child("primary_bn", bn, f);
        }
        if let Some(c) = &mut self.cheap {
            visit_child("cheap", c, f);
        }
        if let Some(bn) = &mut self.cheap_bn {
            visit_child("cheap_bn", bn, f);
        }
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        visit_child_ref("primary", &self.primary, f);
        if let Some(bn) = &self.primary_bn {
            visit_child_ref("primary_bn", bn, f);
        }
        if let Some(c) = &self.cheap {
            visit_child_ref("cheap", c, f);
        }
        if let Some(bn) = &self.cheap_bn {
            visit_child_ref("cheap_bn", bn, f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn intrinsic_count_rounds_up() {
        let c = GhostModuleConfig::new(3, 10, 3, 1, 3);
        assert_eq!(c.intrinsic_channels(), 4);
        assert_eq!(c.cheap_channels(), 8);
        assert_eq!(GhostModuleConfig::new(3, 16, 2, 3, 3).intrinsic_channels(), 8);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(GhostModuleConfig::new(3, 4, 5, 1, 3).validate().is_err());
        assert!(GhostModuleConfig::new(3, 4, 0, 1, 3).validate().is_err());
        assert!(GhostModuleConfig::new(3, 4, 2, 2, 3).validate().is_err());
        assert!(GhostModuleConfig::new(3, 4, 2, 1, 4).validate().is_err());
    }

    #[test]
    fn identity_cheap_kernel_duplicates_intrinsic_maps() {
        let mut rng = Rng::seed_from_u64(11);
        let cfg = GhostModuleConfig::new(2, 4, 2, 3, 3)
            .with_relu(false)
            .with_bn(true, false);
        let mut module = GhostModule::<f64>::new(cfg).unwrap().init(&mut rng);
        let cheap = module.cheap.as_mut().unwrap();
        cheap.weight.value.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..2 {
            cheap.weight.value[c * 9 + 4] = 1.0;
        }
        let x = Tensor::from_fn(Shape::new(1, 2, 4, 4), |i| (i as f64 * 0.7).cos()).unwrap();
        let y = module.infer(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 4, 4));
        assert_eq!(y.narrow_channels(0, 2).unwrap(), y.narrow_channels(2, 2).unwrap());
    }

    #[test]
    fn non_divisible_width_truncates_to_n() {
        let mut rng = Rng::seed_from_u64(5);
        let mut module = GhostModule::<f64>::new(GhostModuleConfig::new(3, 10, 3, 1, 3))
            .unwrap()
            .init(&mut rng);
        let x = Tensor::from_fn(Shape::new(2, 3, 5, 5), |i| (i as f64).sin()).unwrap();
        let y = module.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape().channels, 10);
        let dx = module.backward(&Tensor::full(y.shape(), 1.0).unwrap()).unwrap();
        assert_eq!(dx.shape(), x.shape());
    }

    #[test]
    fn zero_grad_output_gives_zero_grads() {
        let mut rng = Rng::seed_from_u64(2);
        let mut module = GhostModule::<f64>::new(GhostModuleConfig::new(2, 4, 2, 3, 3))
            .unwrap()
            .init(&mut rng);
        let x = Tensor::from_fn(Shape::new(2, 2, 4, 4), |i| (i as f64 * 0.3).sin()).unwrap();
        let y = module.forward(&x, Mode::Train).unwrap();
        let dx = module.backward(&Tensor::zeros(y.shape()).unwrap()).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        module.visit_params_ref(&mut |_, p| assert!(p.grad.iter().all(|&g| g == 0.0)));
    }
}
