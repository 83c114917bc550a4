use crate::error::{Error, Result};
use crate::instrument;
use crate::layer::{missing_cache, Layer, Mode, Param};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization over `(batch, height, width)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: T,
    pub momentum: T,
    cache: Option<BnCache<T>>,
}

/// Forward state needed by [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(vec![channels], T::one()),
            beta: Param::zeros(vec![channels]),
            running_mean: Param::buffer(vec![channels], vec![T::zero(); channels]),
            running_var: Param::buffer(vec![channels], vec![T::one(); channels]),
            eps: T::from_f64(DEFAULT_EPS),
            momentum: T::from_f64(DEFAULT_MOMENTUM),
            cache: None,
        }
    }

    /// Trainable parameter count (γ and β; running statistics excluded).
    pub fn num_params(&self) -> usize {
        2 * self.channels
    }
}

pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    layer: &mut BatchNorm2d<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    input.expect_channels(layer.channels, "batchnorm")?;
    let shape = input.shape();
    let per_channel = shape.batch * shape.plane();
    instrument::record_aux(shape.numel());

    let (mean, var) = match mode {
        Mode::Train => {
            if per_channel < 2 {
                return Err(Error::shape(
                    "batchnorm training needs at least two values per channel",
                ));
            }
            let count = T::from_f64(per_channel as f64);
            let mut mean = vec![T::zero(); layer.channels];
            let mut var = vec![T::zero(); layer.channels];
            for c in 0..layer.channels {
                let s: T = (0..shape.batch).map(|n| input.plane(n, c).iter().copied().sum::<T>()).sum();
                mean[c] = s / count;
                let ss: T = (0..shape.batch)
                    .map(|n| {
                        input
                            .plane(n, c)
                            .iter()
                            .map(|&v| (v - mean[c]) * (v - mean[c]))
                            .sum::<T>()
                    })
                    .sum();
                var[c] = ss / count;
            }
            let m = layer.momentum;
            let unbias = count / (count - T::one());
            for c in 0..layer.channels {
                let rm = &mut layer.running_mean.value[c];
                *rm = m * *rm + (T::one() - m) * mean[c];
                let rv = &mut layer.running_var.value[c];
                *rv = m * *rv + (T::one() - m) * var[c] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (
            layer.running_mean.value.clone(),
            layer.running_var.value.clone(),
        ),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + layer.eps).sqrt()).collect();
    let mut x_hat = input.clone();
    let mut out = input.clone();
    let plane = shape.plane();
    for (i, (xh, y)) in x_hat
        .data_mut()
        .chunks_mut(plane)
        .zip(out.data_mut().chunks_mut(plane))
        .enumerate()
    {
        let c = i % layer.channels;
        let (g, b) = (layer.gamma.value[c], layer.beta.value[c]);
        for (xv, yv) in xh.iter_mut().zip(y.iter_mut()) {
            *xv = (*xv - mean[c]) * inv_std[c];
            *yv = g * *xv + b;
        }
    }
    Ok((out, BnCache { x_hat, inv_std, mode }))
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    layer: &BatchNorm2d<T>,
    grad_output: &Tensor<T>,
) -> Result<BnGrads<T>> {
    let shape = cache.x_hat.shape();
    grad_output.expect_shape(shape, "batchnorm grad_output")?;
    let channels = layer.channels;
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for n in 0..shape.batch {
        for c in 0..channels {
            let g = grad_output.plane(n, c);
            let xh = cache.x_hat.plane(n, c);
            dbeta[c] = dbeta[c] + g.iter().copied().sum::<T>();
            dgamma[c] = dgamma[c] + g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        }
    }

    let count = T::from_f64((shape.batch * shape.plane()) as f64);
    let mut dx = grad_output.clone();
    for (i, (d, xh)) in dx
        .data_mut()
        .chunks_mut(shape.plane())
        .zip(cache.x_hat.data().chunks(shape.plane()))
        .enumerate()
    {
        let c = i % channels;
        let scale = layer.gamma.value[c] * cache.inv_std[c];
        match cache.mode {
            Mode::Eval => d.iter_mut().for_each(|v| *v = *v * scale),
            Mode::Train => {
                let (sb, sg) = (dbeta[c] / count, dgamma[c] / count);
                for (v, &x) in d.iter_mut().zip(xh) {
                    *v = scale * (*v - sb - x * sg);
                }
            }
        }
    }
    Ok(BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn kind(&self) -> &'static str {
        "bn"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, cache) = batchnorm_forward(x, self, mode)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("bn"))?;
        let g = batchnorm_backward(&cache, self, grad)?;
        self.gamma.accumulate(&g.gamma);
        self.beta.accumulate(&g.beta);
        Ok(g.input)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_channels(self.channels, "batchnorm")?;
        instrument::record_aux(x.len());
        let plane = x.shape().plane();
        let mut out = x.clone();
        for (i, y) in out.data_mut().chunks_mut(plane).enumerate() {
            let c = i % self.channels;
            // same arithmetic as the eval branch of `batchnorm_forward`
            let inv = T::one() / (self.running_var.value[c] + self.eps).sqrt();
            let (mean, g, b) = (self.running_mean.value[c], self.gamma.value[c], self.beta.value[c]);
            y.iter_mut().for_each(|v| *v = g * ((*v - mean) * inv) + b);
        }
        Ok(out)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
        f("running_mean", &mut self.running_mean);
        f("running_var", &mut self.running_var);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        f("gamma", &self.gamma);
        f("beta", &self.beta);
        f("running_mean", &self.running_mean);
        f("running_var", &self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn neutral_eval_bn_twice_is_identity() {
        let mut bn = BatchNorm2d::<f64>::new(3);
        bn.eps = 0.0;
        let x = Tensor::from_fn(Shape::new(2, 3, 4, 4), |i| (i as f64 * 0.37).sin()).unwrap();
        let once = bn.infer(&x).unwrap();
        let (twice, _) = batchnorm_forward(&once, &mut bn, Mode::Eval).unwrap();
        assert_eq!(twice, x);
    }

    #[test]
    fn train_mode_normalizes_and_updates_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut bn, Mode::Train).unwrap();
        assert!(y.sum().abs() < 1e-12);
        let var: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.25 / (1.25 + 1e-5)).abs() < 1e-12);
        assert!((bn.running_mean.value[0] - 0.25).abs() < 1e-12);
        // unbiased batch variance 5/3 blended into the initial 1.0
        assert!((bn.running_var.value[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_leaves_running_stats_alone() {
        let mut bn = BatchNorm2d::<f32>::new(2);
        let x = Tensor::full(Shape::new(1, 2, 2, 2), 5.0).unwrap();
        batchnorm_forward(&x, &mut bn, Mode::Eval).unwrap();
        assert_eq!(bn.running_mean.value, vec![0.0, 0.0]);
        assert_eq!(bn.running_var.value, vec![1.0, 1.0]);
    }

    #[test]
    fn single_value_per_channel_rejected_in_train_mode() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::zeros(Shape::new(1, 2, 1, 1)).unwrap();
        assert!(batchnorm_forward(&x, &mut bn, Mode::Train).is_err());
        assert!(batchnorm_forward(&x, &mut bn, Mode::Eval).is_ok());
    }
}
