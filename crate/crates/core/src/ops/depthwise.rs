//! Depthwise convolution: one `d × d` filter per channel, no cross-channel mixing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instrument;
use crate::layer::{missing_cache, Layer, Mode, Param, Rng};
use crate::ops::conv::{output_extent, GRAD_CHUNK};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct DepthwiseConv2d<T> {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(channels, 1, kernel, kernel)`
    pub weight: Param<T>,
    cache: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct DepthwiseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
}

impl<T: Scalar> DepthwiseConv2d<T> {
    pub fn new(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        DepthwiseConv2d {
            channels,
            kernel,
            stride,
            padding,
            weight: Param::zeros(vec![channels, 1, kernel, kernel]),
            cache: None,
        }
    }

    /// "Same" padding, stride 1.
    pub fn same(channels: usize, kernel: usize) -> Self {
        Self::new(channels, kernel, 1, (kernel - 1) / 2)
    }

    pub fn init(mut self, rng: &mut Rng) -> Self {
        self.weight = Param::he_normal(self.weight.dims.clone(), self.kernel * self.kernel, rng);
        self
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Result<Self> {
        if weights.len() != self.weight.len() {
            return Err(Error::shape(format!(
                "depthwise conv expects {} weights, got {}",
                self.weight.len(),
                weights.len()
            )));
        }
        self.weight.value = weights;
        Ok(self)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.channels {
            return Err(Error::shape(format!(
                "depthwise conv has {} channels, input has {}",
                self.channels, input.channels
            )));
        }
        Ok(Shape::new(
            input.batch,
            self.channels,
            output_extent(input.height, self.kernel, self.stride, self.padding)?,
            output_extent(input.width, self.kernel, self.stride, self.padding)?,
        ))
    }

    pub fn macs(&self, output: Shape) -> usize {
        output.numel() * self.kernel * self.kernel
    }

    /// Input pixel feeding output `(oy, ox)` through tap `(ky, kx)`, if inside the image.
    #[inline]
    fn tap(&self, oy: usize, ox: usize, ky: usize, kx: usize, h: usize, w: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
        (iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w)
            .then(|| iy as usize * w + ix as usize)
    }
}

pub fn depthwise_conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    layer: &DepthwiseConv2d<T>,
) -> Result<Tensor<T>> {
    let out_shape = layer.output_shape(input.shape())?;
    instrument::record_macs(layer.macs(out_shape));
    let (h, w) = (input.shape().height, input.shape().width);
    let (oh, ow, k) = (out_shape.height, out_shape.width, layer.kernel);
    let mut out = Tensor::zeros(out_shape)?;
    let channels = layer.channels;
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, dst)| {
            let (n, c) = (plane_idx / channels, plane_idx % channels);
            let src = input.plane(n, c);
            let filt = &layer.weight.value[c * k * k..(c + 1) * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        for kx in 0..k {
                            if let Some(i) = layer.tap(oy, ox, ky, kx, h, w) {
                                acc = acc + filt[ky * k + kx] * src[i];
                            }
                        }
                    }
                    dst[oy * ow + ox] = acc;
                }
            }
        });
    Ok(out)
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &DepthwiseConv2d<T>,
    grad_output: &Tensor<T>,
) -> Result<DepthwiseGrads<T>> {
    let out_shape = layer.output_shape(input.shape())?;
    grad_output.expect_shape(out_shape, "depthwise grad_output")?;
    let (h, w) = (input.shape().height, input.shape().width);
    let (oh, ow, k) = (out_shape.height, out_shape.width, layer.kernel);
    let channels = layer.channels;
    let in_item = input.shape().item();

    let mut grad_input = Tensor::zeros(input.shape())?;
    let partials: Vec<Vec<T>> = grad_input
        .data_mut()
        .par_chunks_mut(in_item * GRAD_CHUNK)
        .enumerate()
        .map(|(chunk, dx_chunk)| {
            let mut dw = vec![T::zero(); channels * k * k];
            for (i, dx) in dx_chunk.chunks_mut(in_item).enumerate() {
                let n = chunk * GRAD_CHUNK + i;
                for c in 0..channels {
                    let src = input.plane(n, c);
                    let gout = grad_output.plane(n, c);
                    let filt = &layer.weight.value[c * k * k..(c + 1) * k * k];
                    let dfilt = &mut dw[c * k * k..(c + 1) * k * k];
                    let dplane = &mut dx[c * h * w..(c + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = gout[oy * ow + ox];
                            for ky in 0..k {
                                for kx in 0..k {
                                    if let Some(idx) = layer.tap(oy, ox, ky, kx, h, w) {
                                        dfilt[ky * k + kx] = dfilt[ky * k + kx] + go * src[idx];
                                        dplane[idx] = dplane[idx] + go * filt[ky * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dw
        })
        .collect();

    let mut grad_weight = vec![T::zero(); channels * k * k];
    for p in &partials {
        for (a, &b) in grad_weight.iter_mut().zip(p) {
            *a = *a + b;
        }
    }
    Ok(DepthwiseGrads {
        input: grad_input,
        weight: grad_weight,
    })
}

impl<T: Scalar> Layer<T> for DepthwiseConv2d<T> {
    fn kind(&self) -> &'static str {
        "dwconv"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = depthwise_conv2d_forward(x, self)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| missing_cache("dwconv"))?;
        let grads = depthwise_conv2d_backward(&x, self, grad)?;
        self.weight.accumulate(&grads.weight);
        Ok(grads.input)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        depthwise_conv2d_forward(x, self)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        f("weight", &self.weight);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_kernel(channels: usize) -> DepthwiseConv2d<f64> {
        let mut w = vec![0.0; channels * 9];
        for c in 0..channels {
            w[c * 9 + 4] = 1.0;
        }
        DepthwiseConv2d::same(channels, 3).with_weights(w).unwrap()
    }

    #[test]
    fn centre_tap_kernel_is_identity() {
        let layer = identity_kernel(3);
        let x = Tensor::from_fn(Shape::new(2, 3, 5, 4), |i| (i as f64).sin()).unwrap();
        assert_eq!(depthwise_conv2d_forward(&x, &layer).unwrap(), x);

        let g = Tensor::from_fn(x.shape(), |i| (i as f64).cos()).unwrap();
        let grads = depthwise_conv2d_backward(&x, &layer, &g).unwrap();
        assert_eq!(grads.input, g);
    }

    #[test]
    fn all_ones_valid_window() {
        let layer = DepthwiseConv2d::new(1, 3, 1, 0).with_weights(vec![1.0; 9]).unwrap();
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0).unwrap();
        assert_eq!(depthwise_conv2d_forward(&x, &layer).unwrap().data(), &[9.0]);
    }

    #[test]
    fn zero_grad_gives_zero_grads() {
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(1);
        let layer = DepthwiseConv2d::<f64>::new(2, 3, 2, 1).init(&mut rng);
        let x = Tensor::from_fn(Shape::new(1, 2, 6, 6), |i| i as f64).unwrap();
        let g = Tensor::zeros(layer.output_shape(x.shape()).unwrap()).unwrap();
        let grads = depthwise_conv2d_backward(&x, &layer, &g).unwrap();
        assert!(grads.input.data().iter().chain(&grads.weight).all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_errors() {
        let layer = DepthwiseConv2d::<f32>::same(4, 3);
        let x = Tensor::zeros(Shape::new(1, 3, 4, 4)).unwrap();
        assert!(depthwise_conv2d_forward(&x, &layer).is_err());
    }
}
