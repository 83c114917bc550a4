//! Trainable parameters and the layer trait every block implements.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Seeded generator used for weight init, shuffling and augmentation.
pub type Rng = rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named tensor of layer state. Non-trainable params (BN running statistics) are
/// checkpointed but never touched by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub dims: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(dims: Vec<usize>, value: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Param {
            dims,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(dims: Vec<usize>, value: Vec<T>) -> Self {
        Param {
            trainable: false,
            ..Param::new(dims, value)
        }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Param::new(dims, vec![T::zero(); n])
    }

    pub fn filled(dims: Vec<usize>, v: T) -> Self {
        let n = dims.iter().product();
        Param::new(dims, vec![v; n])
    }

    /// Fan-in scaled Gaussian, std = sqrt(2 / fan_in).
    pub fn he_normal(dims: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Self {
        let n = dims.iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        let value = (0..n)
            .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal) * std))
            .collect();
        Param::new(dims, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate(&mut self, grad: &[T]) {
        debug_assert_eq!(grad.len(), self.grad.len());
        for (g, &d) in self.grad.iter_mut().zip(grad) {
            *g = *g + d;
        }
    }
}

/// A differentiable block.
///
/// `forward` caches whatever `backward` needs; `backward` accumulates parameter
/// gradients and returns the gradient with respect to the last forward input.
/// `infer` is the cache-free eval-mode path and may run concurrently.
pub trait Layer<T: Scalar>: Send + Sync {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>>;

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Visits parameters in a fixed order with dotted names relative to this layer.
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let _ = f;
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        let _ = f;
    }
}

/// Forwards `child`'s parameters under `prefix.`.
pub(crate) fn visit_child<T: Scalar, L: Layer<T> + ?Sized>(
    prefix: &str,
    child: &mut L,
    f: &mut dyn FnMut(&str, &mut Param<T>),
) {
    child.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

pub(crate) fn visit_child_ref<T: Scalar, L: Layer<T> + ?Sized>(
    prefix: &str,
    child: &L,
    f: &mut dyn FnMut(&str, &Param<T>),
) {
    child.visit_params_ref(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

pub(crate) fn missing_cache(kind: &str) -> crate::error::Error {
    crate::error::Error::config(format!("{kind}: backward called before forward"))
}
