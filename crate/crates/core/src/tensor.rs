//! Dense 4-D tensors in NCHW order.
//!
//! Every tensor carries exactly four dimensions `(batch, channels, height, width)`,
//! all at least one. Flattened feature vectors are stored as `(batch, features, 1, 1)`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point element type. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + Default + Debug + Display + std::fmt::LowerExp + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Decodes one element from the first `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Elements in one batch item.
    pub fn item(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    fn check(&self) -> Result<()> {
        if self.dims().iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-sized dimension in {self}")));
        }
        Ok(())
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Result<Self> {
        shape.check()?;
        Ok(Tensor {
            shape,
            data: vec![value; shape.numel()],
        })
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.check()?;
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "{} elements do not fill shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        shape.check()?;
        Ok(Tensor {
            shape,
            data: (0..shape.numel()).map(&mut f).collect(),
        })
    }

    /// Builds a `(batch, features, 1, 1)` tensor.
    pub fn from_rows(batch: usize, features: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(Shape::new(batch, features, 1, 1), data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.channels + c) * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    /// One `(height, width)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape, "elementwise operand")?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape, "comparison operand")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn expect_shape(&self, shape: Shape, what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(format!(
                "{what}: expected {shape}, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn expect_channels(&self, channels: usize, what: &str) -> Result<()> {
        if self.shape.channels != channels {
            return Err(Error::shape(format!(
                "{what}: expected {channels} input channels, got {}",
                self.shape.channels
            )));
        }
        Ok(())
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concatenation of zero tensors"))?
            .shape;
        let mut channels = 0;
        for p in parts {
            let s = p.shape;
            if s.batch != first.batch || s.height != first.height || s.width != first.width {
                return Err(Error::shape(format!(
                    "cannot concatenate {s} with {first} along channels"
                )));
            }
            channels += s.channels;
        }
        let shape = Shape::new(first.batch, channels, first.height, first.width);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.batch {
            for p in parts {
                data.extend_from_slice(p.item(n));
            }
        }
        Tensor::from_vec(shape, data)
    }

    /// Channels `[start, start + count)`.
    pub fn narrow_channels(&self, start: usize, count: usize) -> Result<Self> {
        let s = self.shape;
        if count == 0 || start + count > s.channels {
            return Err(Error::shape(format!(
                "channel range {start}..{} outside {s}",
                start + count
            )));
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.batch * count * p);
        for n in 0..s.batch {
            let base = (n * s.channels + start) * p;
            data.extend_from_slice(&self.data[base..base + count * p]);
        }
        Tensor::from_vec(Shape::new(s.batch, count, s.height, s.width), data)
    }

    /// Inverse of [`narrow_channels`](Self::narrow_channels) for gradients: places
    /// `self` at channel `start` inside a zero tensor with `channels` channels.
    pub fn pad_channels(&self, start: usize, channels: usize) -> Result<Self> {
        let s = self.shape;
        if start + s.channels > channels {
            return Err(Error::shape(format!(
                "cannot place {s} at channel {start} of {channels}"
            )));
        }
        let p = s.plane();
        let mut out = Tensor::zeros(Shape::new(s.batch, channels, s.height, s.width))?;
        for n in 0..s.batch {
            let dst = (n * channels + start) * p;
            out.data[dst..dst + s.item()].copy_from_slice(self.item(n));
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
