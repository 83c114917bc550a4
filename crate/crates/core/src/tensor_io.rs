//! Tensor dump files.
//!
//! Binary layout (little-endian): magic `GTSR`, `u32` rank, `rank` × `u32` dims, then
//! the raw scalars. The element width (f32 or f64) follows from the payload length.
//! The text variant is a `GTSR <rank> <dims...>` header line followed by
//! whitespace-separated values, used for hand-written fixtures.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"GTSR";

pub fn encode<T: Scalar>(tensor: &Tensor<T>) -> Vec<u8> {
    let dims = tensor.shape().dims();
    let mut out = Vec::with_capacity(8 + 16 + tensor.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decodes a binary dump, converting elements to `T`. `path` is only used in errors.
pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(4)? != MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected GTSR"));
    }
    let rank = cur.u32()? as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::format(path, 4, format!("unsupported rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(cur.u32()? as usize);
    }
    let shape = shape_from_dims(&dims).map_err(|m| Error::format(path, 8, m))?;
    let count = shape.numel();
    let payload = bytes.len() - cur.pos;
    let dtype = if payload == count * 4 {
        DType::F32
    } else if payload == count * 8 {
        DType::F64
    } else {
        return Err(Error::format(
            path,
            cur.pos as u64,
            format!("payload of {payload} bytes does not hold {count} f32 or f64 values"),
        ));
    };
    let width = dtype.size();
    let data = bytes[cur.pos..]
        .chunks_exact(width)
        .map(|chunk| match dtype {
            DType::F32 => T::from_f64(f32::read_le(chunk) as f64),
            DType::F64 => T::from_f64(f64::read_le(chunk)),
        })
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn encode_text<T: Scalar>(tensor: &Tensor<T>) -> String {
    let dims = tensor.shape().dims();
    let mut out = format!("GTSR 4 {} {} {} {}\n", dims[0], dims[1], dims[2], dims[3]);
    let w = tensor.shape().width;
    for row in tensor.data().chunks(w) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn decode_text<T: Scalar>(text: &str) -> Result<Tensor<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty tensor file".into(),
    })?;
    let perr = |line: usize, message: String| Error::Parse {
        line: line + 1,
        message,
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&"GTSR") || fields.len() < 2 {
        return Err(perr(hline, "expected `GTSR <rank> <dims...>` header".into()));
    }
    let nums: Vec<usize> = fields[1..]
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| perr(hline, format!("bad header number: {e}")))?;
    let rank = nums[0];
    if nums.len() != rank + 1 {
        return Err(perr(hline, format!("rank {rank} but {} dims", nums.len() - 1)));
    }
    let shape = shape_from_dims(&nums[1..]).map_err(|m| perr(hline, m))?;
    let mut data = Vec::with_capacity(shape.numel());
    for (i, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| perr(i, format!("bad value `{tok}`")))?;
            data.push(T::from_f64(v));
        }
    }
    if data.len() != shape.numel() {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("expected {} values, found {}", shape.numel(), data.len()),
        });
    }
    Tensor::from_vec(shape, data)
}

pub fn save<T: Scalar>(tensor: &Tensor<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Lower-rank dims are right-aligned into NCHW, so `[h, w]` becomes `1x1xhxw`.
fn shape_from_dims(dims: &[usize]) -> std::result::Result<Shape, String> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(format!("unsupported rank {}", dims.len()));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err("zero-sized dimension".into());
    }
    let mut full = [1usize; 4];
    full[4 - dims.len()..].copy_from_slice(dims);
    Ok(Shape::new(full[0], full[1], full[2], full[3]))
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor { bytes, pos: 0, path }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!(
                    "truncated: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
