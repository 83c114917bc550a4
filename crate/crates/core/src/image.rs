//! Netpbm images: PGM (P2, P5) and PPM (P3, P6) reading, binary PGM writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel-planar, scaled to `[0, 1]`.
    pub pixels: Vec<f32>,
}

impl Image {
    /// `(1, channels, height, width)` tensor of the pixels.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec(
            Shape::new(1, self.channels, self.height, self.width),
            self.pixels.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, self.pos as u64, msg)
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.err("number out of range"))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = bytes.get(..2).ok_or_else(|| r.err("file too short for a netpbm header"))?;
    let (channels, binary) = match magic {
        b"P2" => (1, false),
        b"P5" => (1, true),
        b"P3" => (3, false),
        b"P6" => (3, true),
        _ => return Err(r.err("not a PGM/PPM file (expected P2, P3, P5 or P6)")),
    };
    r.pos = 2;
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(r.err(format!("bad header {width}x{height} maxval {maxval}")));
    }
    let count = width * height * channels;
    let scale = maxval as f32;
    let mut interleaved = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates header and raster
        r.pos += 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let raster = bytes
            .get(r.pos..r.pos + need)
            .ok_or_else(|| r.err(format!("truncated raster: need {need} bytes")))?;
        if wide {
            interleaved.extend(raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / scale));
        } else {
            interleaved.extend(raster.iter().map(|&b| b as f32 / scale));
        }
    } else {
        for _ in 0..count {
            let v = r.number()?;
            if v > maxval {
                return Err(r.err(format!("sample {v} exceeds maxval {maxval}")));
            }
            interleaved.push(v as f32 / scale);
        }
    }
    let plane = width * height;
    let mut pixels = vec![0.0; count];
    for (i, v) in interleaved.into_iter().enumerate() {
        pixels[(i % channels) * plane + i / channels] = v;
    }
    Ok(Image {
        channels,
        height,
        width,
        pixels,
    })
}

pub fn load(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Binary PGM of a single map, min..max stretched to 0..255.
pub fn encode_pgm(map: &[f64], height: usize, width: usize) -> Vec<u8> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(map.iter().map(|&v| ((v - lo) / span * 255.0).round() as u8));
    out
}

pub fn save_pgm(path: &Path, map: &[f64], height: usize, width: usize) -> Result<()> {
    std::fs::write(path, encode_pgm(map, height, width)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_and_binary_agree() {
        let p2 = b"P2\n# tiny\n2 1\n255\n0 255\n";
        let p5 = b"P5 2 1 255\n\x00\xff";
        let a = decode(p2, Path::new("a")).unwrap();
        let b = decode(p5, Path::new("b")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pixels, vec![0.0, 1.0]);
    }

    #[test]
    fn ppm_is_planar() {
        let img = decode(b"P3 1 2 255 255 0 0 0 255 0", Path::new("c")).unwrap();
        assert_eq!(img.channels, 3);
        assert_eq!(img.pixels, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn truncated_raster() {
        assert!(matches!(
            decode(b"P5 4 4 255\n\x00", Path::new("t")),
            Err(Error::Format { .. })
        ));
        assert!(decode(b"BM", Path::new("t")).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let bytes = encode_pgm(&[0.0, 0.5, 1.0], 1, 3);
        let img = decode(&bytes, Path::new("r")).unwrap();
        assert_eq!(img.pixels[0], 0.0);
        assert_eq!(img.pixels[2], 1.0);
    }
}
