//! Fully connected layer and flatten. Feature vectors are `(batch, features, 1, 1)`.

use crate::error::{Error, Result};
use crate::instrument;
use crate::layer::{missing_cache, Layer, Mode, Param, Rng};
use crate::ops::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out_features, in_features)`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, bias: bool) -> Self {
        Linear {
            in_features,
            out_features,
            weight: Param::zeros(vec![out_features, in_features]),
            bias: bias.then(|| Param::zeros(vec![out_features])),
            cache: None,
        }
    }

    pub fn init(mut self, rng: &mut Rng) -> Self {
        self.weight = Param::he_normal(self.weight.dims.clone(), self.in_features, rng);
        self
    }

    pub fn with_weights(mut self, weights: Vec<T>, bias: Option<Vec<T>>) -> Result<Self> {
        if weights.len() != self.weight.len() {
            return Err(Error::shape(format!(
                "fc expects {} weights, got {}",
                self.weight.len(),
                weights.len()
            )));
        }
        self.weight.value = weights;
        match (bias, &mut self.bias) {
            (Some(b), Some(p)) if b.len() == p.len() => p.value = b,
            (None, _) => {}
            _ => return Err(Error::shape("fc bias length or presence mismatch")),
        }
        Ok(self)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.height != 1 || s.width != 1 || s.channels != self.in_features {
            return Err(Error::shape(format!(
                "fc expects (batch, {}, 1, 1) features, got {s}",
                self.in_features
            )));
        }
        Ok(())
    }
}

pub fn fc_forward<T: Scalar>(x: &Tensor<T>, layer: &Linear<T>) -> Result<Tensor<T>> {
    layer.check_input(x)?;
    let batch = x.shape().batch;
    instrument::record_macs(batch * layer.in_features * layer.out_features);
    let mut out = vec![T::zero(); batch * layer.out_features];
    if let Some(b) = &layer.bias {
        for row in out.chunks_mut(layer.out_features) {
            row.copy_from_slice(&b.value);
        }
    }
    gemm_nt(
        batch,
        layer.in_features,
        layer.out_features,
        x.data(),
        &layer.weight.value,
        &mut out,
    );
    Tensor::from_rows(batch, layer.out_features, out)
}

pub fn fc_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &Linear<T>,
    grad: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    layer.check_input(x)?;
    let batch = x.shape().batch;
    grad.expect_shape(Shape::new(batch, layer.out_features, 1, 1), "fc grad_output")?;
    let (fi, fo) = (layer.in_features, layer.out_features);

    let mut dx = vec![T::zero(); batch * fi];
    gemm_nn(batch, fo, fi, grad.data(), &layer.weight.value, &mut dx);
    let mut dw = vec![T::zero(); fo * fi];
    gemm_tn(fo, batch, fi, grad.data(), x.data(), &mut dw);
    let db = layer.bias.as_ref().map(|_| {
        let mut db = vec![T::zero(); fo];
        for row in grad.data().chunks(fo) {
            for (a, &g) in db.iter_mut().zip(row) {
                *a = *a + g;
            }
        }
        db
    });
    Ok(LinearGrads {
        input: Tensor::from_rows(batch, fi, dx)?,
        weight: dw,
        bias: db,
    })
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn kind(&self) -> &'static str {
        "fc"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = fc_forward(x, self)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| missing_cache("fc"))?;
        let g = fc_backward(&x, self, grad)?;
        self.weight.accumulate(&g.weight);
        if let (Some(b), Some(gb)) = (&mut self.bias, &g.bias) {
            b.accumulate(gb);
        }
        Ok(g.input)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        fc_forward(x, self)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
        if let Some(b) = &mut self.bias {
            f("bias", b);
        }
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        f("weight", &self.weight);
        if let Some(b) = &self.bias {
            f("bias", b);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cache: Option<Shape>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten::default()
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.cache = Some(x.shape());
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.take().ok_or_else(|| missing_cache("flatten"))?;
        grad.clone().reshape(shape)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        x.clone().reshape(Shape::new(s.batch, s.item(), 1, 1))
    }
}
