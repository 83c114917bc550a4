//! Ordinary 2-D convolution (cross-correlation, zero padding) via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instrument;
use crate::layer::{missing_cache, Layer, Mode, Param, Rng};
use crate::ops::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Scalar, Shape, Tensor};

/// Samples per partial weight-gradient sum. Fixed so the reduction order, and
/// therefore the result, never depends on the thread count.
pub(crate) const GRAD_CHUNK: usize = 8;

/// Output extent of a strided, padded window sweep.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("stride must be at least 1"));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out_channels, in_channels, kernel, kernel)`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<Tensor<T>>,
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialized layer; see [`Conv2d::init`] for random weights.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::zeros(vec![out_channels, in_channels, kernel, kernel]),
            bias: bias.then(|| Param::zeros(vec![out_channels])),
            cache: None,
        }
    }

    pub fn init(mut self, rng: &mut Rng) -> Self {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        self.weight = Param::he_normal(self.weight.dims.clone(), fan_in, rng);
        self
    }

    pub fn with_weights(mut self, weights: Vec<T>, bias: Option<Vec<T>>) -> Result<Self> {
        if weights.len() != self.weight.len() {
            return Err(Error::shape(format!(
                "conv expects {} weights, got {}",
                self.weight.len(),
                weights.len()
            )));
        }
        self.weight.value = weights;
        match (bias, &mut self.bias) {
            (Some(b), Some(p)) if b.len() == p.len() => p.value = b,
            (None, _) => {}
            _ => return Err(Error::shape("conv bias length or presence mismatch")),
        }
        Ok(self)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        Ok(Shape::new(
            input.batch,
            self.out_channels,
            output_extent(input.height, self.kernel, self.stride, self.padding)?,
            output_extent(input.width, self.kernel, self.stride, self.padding)?,
        ))
    }

    pub fn macs(&self, output: Shape) -> usize {
        output.numel() * self.in_channels * self.kernel * self.kernel
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one sample `(c, h, w)` into a `(c·k·k) × (oh·ow)` patch matrix.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut [T]) {
    let cols = g.cols();
    for ch in 0..g.c {
        let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input sample.
fn col2im<T: Scalar>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let cols = g.cols();
    for ch in 0..g.c {
        let plane = &mut dx[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            let i = iy as usize * g.w + ix as usize;
                            plane[i] = plane[i] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Scalar>(layer: &Conv2d<T>, input: Shape, output: Shape) -> Geometry {
    Geometry {
        c: input.channels,
        h: input.height,
        w: input.width,
        k: layer.kernel,
        stride: layer.stride,
        pad: layer.padding,
        oh: output.height,
        ow: output.width,
    }
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, layer: &Conv2d<T>) -> Result<Tensor<T>> {
    let out_shape = layer.output_shape(input.shape())?;
    let g = geometry(layer, input.shape(), out_shape);
    instrument::record_macs(layer.macs(out_shape));

    let mut out = Tensor::zeros(out_shape)?;
    let out_item = out_shape.item();
    let w = &layer.weight.value;
    let bias = layer.bias.as_ref().map(|b| &b.value);
    out.data_mut()
        .par_chunks_mut(out_item)
        .enumerate()
        .for_each(|(n, dst)| {
            let mut col = vec![T::zero(); g.rows() * g.cols()];
            im2col(input.item(n), &g, &mut col);
            if let Some(b) = bias {
                for (o, plane) in dst.chunks_mut(g.cols()).enumerate() {
                    plane.iter_mut().for_each(|v| *v = b[o]);
                }
            }
            gemm_nn(layer.out_channels, g.rows(), g.cols(), w, &col, dst);
        });
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &Conv2d<T>,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = layer.output_shape(input.shape())?;
    grad_output.expect_shape(out_shape, "conv grad_output")?;
    let g = geometry(layer, input.shape(), out_shape);
    let (rows, cols, n_out) = (g.rows(), g.cols(), layer.out_channels);
    let w = &layer.weight.value;

    let mut grad_input = Tensor::zeros(input.shape())?;
    let in_item = input.shape().item();
    let batch = input.shape().batch;

    // Input gradients are independent per sample; weight gradients are summed
    // within fixed-size sample chunks, then across chunks in order.
    let partials: Vec<Vec<T>> = grad_input
        .data_mut()
        .par_chunks_mut(in_item * GRAD_CHUNK)
        .enumerate()
        .map(|(chunk, dx_chunk)| {
            let mut dw = vec![T::zero(); n_out * rows];
            let mut col = vec![T::zero(); rows * cols];
            let mut dcol = vec![T::zero(); rows * cols];
            for (i, dx) in dx_chunk.chunks_mut(in_item).enumerate() {
                let n = chunk * GRAD_CHUNK + i;
                let gout = grad_output.item(n);
                im2col(input.item(n), &g, &mut col);
                gemm_nt(n_out, cols, rows, gout, &col, &mut dw);
                dcol.iter_mut().for_each(|v| *v = T::zero());
                gemm_tn(rows, n_out, cols, w, gout, &mut dcol);
                col2im(&dcol, &g, dx);
            }
            dw
        })
        .collect();

    let mut grad_weight = vec![T::zero(); n_out * rows];
    for p in &partials {
        for (a, &b) in grad_weight.iter_mut().zip(p) {
            *a = *a + b;
        }
    }

    let grad_bias = layer.bias.as_ref().map(|_| {
        let mut gb = vec![T::zero(); n_out];
        for n in 0..batch {
            for (o, plane) in grad_output.item(n).chunks(cols).enumerate() {
                gb[o] = gb[o] + plane.iter().copied().sum::<T>();
            }
        }
        gb
    });

    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> &'static str {
        "conv"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = conv2d_forward(x, self)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| missing_cache("conv"))?;
        let grads = conv2d_backward(&x, self, grad)?;
        self.weight.accumulate(&grads.weight);
        if let (Some(b), Some(gb)) = (&mut self.bias, &grads.bias) {
            b.accumulate(gb);
        }
        Ok(grads.input)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, self)
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
