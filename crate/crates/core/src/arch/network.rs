//! Materialized sequential networks.

use rand::SeedableRng;

use super::spec::{Activation, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::ghost::{GhostBottleneck, GhostModule};
use crate::instrument::{self, Tally};
use crate::layer::{visit_child, visit_child_ref, Layer, Mode, Param, Rng};
use crate::ops::{AvgPool2d, BatchNorm2d, Conv2d, Flatten, Linear, Relu};
use crate::tensor::{Scalar, Tensor};

pub struct Network<T: Scalar> {
    spec: NetworkSpec,
    layers: Vec<Box<dyn Layer<T>>>,
}

fn build_layer<T: Scalar>(layer: &LayerSpec, input: Activation, rng: &mut Rng) -> Result<Box<dyn Layer<T>>> {
    let cin = input.channels();
    Ok(match *layer {
        LayerSpec::Conv(c) => {
            Box::new(Conv2d::new(cin, c.out, c.kernel, c.stride, c.padding, c.bias).init(rng))
        }
        LayerSpec::Ghost(g) => Box::new(GhostModule::new(g.module_config(cin))?.init(rng)),
        LayerSpec::Bottleneck(b) => Box::new(GhostBottleneck::new(b.block_config(cin))?.init(rng)),
        LayerSpec::BatchNorm => Box::new(BatchNorm2d::new(cin)),
        LayerSpec::Relu => Box::new(Relu::new()),
        LayerSpec::AvgPool(None) => Box::new(AvgPool2d::global()),
        LayerSpec::AvgPool(Some((k, s))) => Box::new(AvgPool2d::windowed(k, s)),
        LayerSpec::Fc { out, bias } => Box::new(Linear::new(cin, out, bias).init(rng)),
        LayerSpec::Flatten => Box::new(Flatten::new()),
    })
}

impl<T: Scalar> Network<T> {
    /// Validates `spec` and allocates weights from a generator seeded with `seed`.
    pub fn materialize(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let inputs = spec.layer_inputs()?;
        let mut rng = Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .zip(inputs)
            .enumerate()
            .map(|(index, (l, a))| {
                build_layer(l, a, &mut rng).map_err(|e| Error::Spec {
                    index,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Network {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, index: usize) -> &dyn Layer<T> {
        self.layers[index].as_ref()
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut dyn Layer<T> {
        self.layers[index].as_mut()
    }

    /// `"<index>.<kind>"`, the prefix used for parameter names and reports.
    pub fn layer_name(&self, index: usize) -> String {
        format!("{index}.{}", self.layers[index].kind())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().channels != self.spec.input.0 {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.spec.input.0,
                x.shape()
            )));
        }
        Ok(())
    }

    fn at_layer<R>(index: usize, r: Result<R>) -> Result<R> {
        r.map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("layer {index}: {m}")),
            other => other,
        })
    }

    /// Logits of shape `(batch, num_classes, 1, 1)`. Train mode caches for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = Self::at_layer(i, layer.forward(&h, mode))?;
        }
        Ok(h)
    }

    /// Backpropagates `grad` (dL/dlogits), accumulating parameter gradients.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = Self::at_layer(i, layer.backward(&g))?;
        }
        Ok(g)
    }

    /// Eval-mode forward without caching; safe to call concurrently.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = Self::at_layer(i, layer.infer(&h))?;
        }
        Ok(h)
    }

    /// Eval-mode forward returning every layer's output.
    pub fn infer_trace(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let mut outs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let h = Self::at_layer(i, layer.infer(outs.last().unwrap_or(x)))?;
            outs.push(h);
        }
        Ok(outs)
    }

    /// Eval-mode forward that tallies the work each layer actually performs.
    pub fn infer_instrumented(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tally>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut tallies = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (r, t) = instrument::measure(|| layer.infer(&h));
            h = Self::at_layer(i, r)?;
            tallies.push(t);
        }
        Ok((h, tallies))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let prefix = format!("{i}.{}", layer.kind());
            visit_child(&prefix, layer.as_mut(), f);
        }
    }

    pub fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            let prefix = format!("{i}.{}", layer.kind());
            visit_child_ref(&prefix, layer.as_ref(), f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    /// Trainable scalar count.
    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params_ref(&mut |_, p| {
            if p.trainable {
                n += p.len();
            }
        });
        n
    }
}
