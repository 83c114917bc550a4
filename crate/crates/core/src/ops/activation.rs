use crate::error::Result;
use crate::instrument;
use crate::layer::{missing_cache, Layer, Mode};
use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    instrument::record_aux(x.len());
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `output` is the forward result; the gradient passes where it is positive.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    output.zip_map(grad, |y, g| if y > T::zero() { g } else { T::zero() })
}

/// Squashing function used by SE gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gate {
    /// `clamp(x / 6 + 1/2, 0, 1)`
    #[default]
    HardSigmoid,
    Sigmoid,
}

impl Gate {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Gate::HardSigmoid => {
                let y = x / T::from_f64(6.0) + T::from_f64(0.5);
                y.max(T::zero()).min(T::one())
            }
            Gate::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    /// Derivative at input `x`, given `y = apply(x)`.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Gate::HardSigmoid => {
                let lim = T::from_f64(3.0);
                if x > -lim && x < lim {
                    T::one() / T::from_f64(6.0)
                } else {
                    T::zero()
                }
            }
            Gate::Sigmoid => y * (T::one() - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::HardSigmoid => "hsig",
            Gate::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hsig" | "hardsigmoid" => Some(Gate::HardSigmoid),
            "sigmoid" => Some(Gate::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    cache: Option<Tensor<T>>,
}

impl<T> Relu<T> {
    pub fn new() -> Self {
        Relu { cache: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = relu_forward(x);
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.take().ok_or_else(|| missing_cache("relu"))?;
        relu_backward(&y, grad)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu_forward(x))
    }
}
