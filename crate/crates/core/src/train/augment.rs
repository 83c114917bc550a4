use rand::Rng as _;

use super::config::Augment;
use crate::error::{Error, Result};
use crate::layer::Rng;
use crate::tensor::{Scalar, Shape, Tensor};

pub const CROP_PAD: usize = 4;

/// Crop of the zero-padded image starting at `(dy, dx)` in padded coordinates.
/// `(pad, pad)` returns the original image.
pub fn crop_padded<T: Scalar>(image: &Tensor<T>, pad: usize, dy: usize, dx: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if dy > 2 * pad || dx > 2 * pad {
        return Err(Error::config(format!("crop offset ({dy}, {dx}) outside padding {pad}")));
    }
    Tensor::from_fn(s, |i| {
        let x = i % s.width;
        let y = (i / s.width) % s.height;
        let sy = (y + dy) as isize - pad as isize;
        let sx = (x + dx) as isize - pad as isize;
        if sy < 0 || sx < 0 || sy >= s.height as isize || sx >= s.width as isize {
            T::zero()
        } else {
            let base = i - y * s.width - x;
            image.data()[base + sy as usize * s.width + sx as usize]
        }
    })
}

pub fn mirror<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let w = image.shape().width;
    let mut out = image.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Augments each sample of a batch independently. Per sample the generator yields
/// the crop row, crop column and flip decision, in that order, for enabled steps.
pub fn augment<T: Scalar>(batch: &Tensor<T>, cfg: Augment, rng: &mut Rng) -> Result<Tensor<T>> {
    let s = batch.shape();
    if s.height != s.width {
        return Err(Error::shape(format!("augmentation needs square images, got {s}")));
    }
    if !cfg.any() {
        return Ok(batch.clone());
    }
    let mut out = Vec::with_capacity(batch.len());
    for n in 0..s.batch {
        let mut img = Tensor::from_vec(Shape::new(1, s.channels, s.height, s.width), batch.item(n).to_vec())?;
        if cfg.crop {
            let dy = rng.gen_range(0..=2 * CROP_PAD);
            let dx = rng.gen_range(0..=2 * CROP_PAD);
            img = crop_padded(&img, CROP_PAD, dy, dx)?;
        }
        if cfg.mirror && rng.gen_bool(0.5) {
            img = mirror(&img);
        }
        out.extend_from_slice(img.data());
    }
    Tensor::from_vec(s, out)
}
