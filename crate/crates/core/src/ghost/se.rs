//! Squeeze-and-excite channel gating.

use crate::error::{Error, Result};
use crate::instrument;
use crate::layer::{missing_cache, visit_child, visit_child_ref, Layer, Mode, Param, Rng};
use crate::ops::{avgpool_forward, AvgPool2d, Gate, Linear};
use crate::tensor::{Scalar, Shape, Tensor};

pub const DEFAULT_REDUCTION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeConfig {
    pub reduction: usize,
    pub gate: Gate,
}

impl Default for SeConfig {
    fn default() -> Self {
        SeConfig {
            reduction: DEFAULT_REDUCTION,
            gate: Gate::HardSigmoid,
        }
    }
}

impl SeConfig {
    pub fn reduced_width(&self, channels: usize) -> usize {
        (channels / self.reduction.max(1)).max(1)
    }
}

#[derive(Debug, Clone)]
struct Cache<T> {
    input: Tensor<T>,
    hidden: Tensor<T>,
    pre_gate: Tensor<T>,
    gate: Tensor<T>,
}

/// Global pool → FC (C→C/r) → ReLU → FC (C/r→C) → gate → channelwise scale.
/// All of its cost is auxiliary in the cost model.
#[derive(Debug, Clone)]
pub struct SeBlock<T> {
    pub channels: usize,
    pub config: SeConfig,
    pub reduce: Linear<T>,
    pub expand: Linear<T>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new(channels: usize, config: SeConfig) -> Self {
        let reduced = config.reduced_width(channels);
        SeBlock {
            channels,
            config,
            reduce: Linear::new(channels, reduced, true),
            expand: Linear::new(reduced, channels, true),
            cache: None,
        }
    }

    pub fn init(mut self, rng: &mut Rng) -> Self {
        self.reduce = self.reduce.init(rng);
        self.expand = self.expand.init(rng);
        self
    }

    pub fn reduced(&self) -> usize {
        self.reduce.out_features
    }

    fn pooled(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().channels != self.channels {
            return Err(Error::shape(format!(
                "SE block width {} but input has {} channels",
                self.channels,
                x.shape().channels
            )));
        }
        let p = avgpool_forward(x, &AvgPool2d::global())?;
        let s = p.shape();
        p.reshape(Shape::new(s.batch, s.channels, 1, 1))
    }

    fn apply_gate(&self, pre: &Tensor<T>) -> Tensor<T> {
        instrument::record_aux(pre.len());
        let gate = self.config.gate;
        pre.map(|v| gate.apply(v))
    }

    fn scale(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
        instrument::record_aux(x.len());
        let plane = x.shape().plane();
        let mut out = x.clone();
        for (chunk, &g) in out.data_mut().chunks_mut(plane).zip(gate.data()) {
            chunk.iter_mut().for_each(|v| *v = *v * g);
        }
        Ok(out)
    }
}

impl<T: Scalar> Layer<T> for SeBlock<T> {
    fn kind(&self) -> &'static str {
        "se"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        instrument::as_aux(|| {
            let pooled = self.pooled(x)?;
            let hidden = crate::ops::relu_forward(&self.reduce.forward(&pooled, mode)?);
            let pre_gate = self.expand.forward(&hidden, mode)?;
            let gate = self.apply_gate(&pre_gate);
            let out = Self::scale(x, &gate)?;
            self.cache = Some(Cache {
                input: x.clone(),
                hidden,
                pre_gate,
                gate,
            });
            Ok(out)
        })
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("se"))?;
        let x = &cache.input;
        grad.expect_shape(x.shape(), "SE grad_output")?;
        let s = x.shape();
        let plane = s.plane();

        // d(out)/d(gate) summed over each plane
        let mut d_gate = cache.gate.clone();
        for (i, dg) in d_gate.data_mut().iter_mut().enumerate() {
            let (n, c) = (i / s.channels, i % s.channels);
            *dg = grad
                .plane(n, c)
                .iter()
                .zip(x.plane(n, c))
                .map(|(&g, &v)| g * v)
                .sum();
        }
        let gate_fn = self.config.gate;
        let d_pre = cache
            .pre_gate
            .zip_map(&cache.gate, |z, y| gate_fn.derivative(z, y))?
            .zip_map(&d_gate, |a, b| a * b)?;
        let d_hidden = self.expand.backward(&d_pre)?;
        let d_hidden = crate::ops::relu_backward(&cache.hidden, &d_hidden)?;
        let d_pooled = self.reduce.backward(&d_hidden)?;

        let inv_area = T::one() / T::from_f64(plane as f64);
        let mut dx = grad.clone();
        for (i, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
            let g = cache.gate.data()[i];
            let back = d_pooled.data()[i] * inv_area;
            chunk.iter_mut().for_each(|v| *v = *v * g + back);
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        instrument::as_aux(|| {
            let pooled = self.pooled(x)?;
            let hidden = crate::ops::relu_forward(&self.reduce.infer(&pooled)?);
            let gate = self.apply_gate(&self.expand.infer(&hidden)?);
            Self::scale(x, &gate)
        })
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        visit_child("reduce", &mut self.reduce, f);
        visit_child("expand", &mut self.expand, f);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        visit_child_ref("reduce", &self.reduce, f);
        visit_child_ref("expand", &self.expand, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn input() -> Tensor<f64> {
        Tensor::from_fn(Shape::new(2, 8, 3, 3), |i| (i as f64 * 0.41).sin()).unwrap()
    }

    #[test]
    fn zero_expand_weights_halve_the_input() {
        let mut rng = Rng::seed_from_u64(1);
        let mut se = SeBlock::<f64>::new(8, SeConfig::default()).init(&mut rng);
        se.expand.weight.value.iter_mut().for_each(|v| *v = 0.0);
        let x = input();
        assert_eq!(se.infer(&x).unwrap(), x.scale(0.5));
    }

    #[test]
    fn saturated_gate_is_identity() {
        let mut rng = Rng::seed_from_u64(1);
        let mut se = SeBlock::<f64>::new(8, SeConfig::default()).init(&mut rng);
        se.expand.weight.value.iter_mut().for_each(|v| *v = 0.0);
        se.expand.bias.as_mut().unwrap().value.iter_mut().for_each(|v| *v = 100.0);
        let x = input();
        assert_eq!(se.infer(&x).unwrap(), x);
    }

    #[test]
    fn reduced_width_never_zero() {
        assert_eq!(SeConfig::default().reduced_width(3), 1);
        assert_eq!(SeConfig::default().reduced_width(72), 18);
    }
}
