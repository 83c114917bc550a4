use crate::error::{Error, Result};
use crate::instrument;
use crate::layer::{missing_cache, Layer, Mode};
use crate::ops::conv::output_extent;
use crate::tensor::{Scalar, Shape, Tensor};

/// Average pooling. `window: None` pools each plane down to one value.
#[derive(Debug, Clone)]
pub struct AvgPool2d<T> {
    pub window: Option<(usize, usize)>,
    cache: Option<Shape>,
    _marker: std::marker::PhantomData<T>,
}

impl<T> AvgPool2d<T> {
    pub fn global() -> Self {
        AvgPool2d {
            window: None,
            cache: None,
            _marker: Default::default(),
        }
    }

    pub fn windowed(kernel: usize, stride: usize) -> Self {
        AvgPool2d {
            window: Some((kernel, stride)),
            ..Self::global()
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self.window {
            None => Ok(Shape::new(input.batch, input.channels, 1, 1)),
            Some((k, s)) => {
                if k == 0 {
                    return Err(Error::shape("pooling window must be at least 1"));
                }
                Ok(Shape::new(
                    input.batch,
                    input.channels,
                    output_extent(input.height, k, s, 0)?,
                    output_extent(input.width, k, s, 0)?,
                ))
            }
        }
    }
}

pub fn avgpool_forward<T: Scalar>(x: &Tensor<T>, pool: &AvgPool2d<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let out_shape = pool.output_shape(s)?;
    let (stride, kh, kw) = match pool.window {
        None => (1, s.height, s.width),
        Some((k, st)) => (st, k, k),
    };
    instrument::record_aux(out_shape.numel() * kh * kw);
    let norm = T::one() / T::from_f64((kh * kw) as f64);
    let mut out = Tensor::zeros(out_shape)?;
    let (oh, ow) = (out_shape.height, out_shape.width);
    for (i, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let src = x.plane(i / s.channels, i % s.channels);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ky in 0..kh {
                    let row = (oy * stride + ky) * s.width + ox * stride;
                    acc = acc + src[row..row + kw].iter().copied().sum::<T>();
                }
                dst[oy * ow + ox] = acc * norm;
            }
        }
    }
    Ok(out)
}

pub fn avgpool_backward<T: Scalar>(
    input_shape: Shape,
    pool: &AvgPool2d<T>,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let out_shape = pool.output_shape(input_shape)?;
    grad.expect_shape(out_shape, "avgpool grad_output")?;
    let (stride, kh, kw) = match pool.window {
        None => (1, input_shape.height, input_shape.width),
        Some((k, s)) => (s, k, k),
    };
    let norm = T::one() / T::from_f64((kh * kw) as f64);
    let mut dx = Tensor::zeros(input_shape)?;
    let (oh, ow) = (out_shape.height, out_shape.width);
    let (h, w) = (input_shape.height, input_shape.width);
    for (i, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let g = grad.plane(i / input_shape.channels, i % input_shape.channels);
        for oy in 0..oh {
            for ox in 0..ow {
                let share = g[oy * ow + ox] * norm;
                for ky in 0..kh {
                    let row = (oy * stride + ky) * w + ox * stride;
                    dst[row..row + kw].iter_mut().for_each(|v| *v = *v + share);
                }
            }
        }
    }
    Ok(dx)
}

impl<T: Scalar> Layer<T> for AvgPool2d<T> {
    fn kind(&self) -> &'static str {
        "avgpool"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = avgpool_forward(x, self)?;
        self.cache = Some(x.shape());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.take().ok_or_else(|| missing_cache("avgpool"))?;
        avgpool_backward(shape, self, grad)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        avgpool_forward(x, self)
    }
}
