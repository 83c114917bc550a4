//! Weight checkpoints.
//!
//! Little-endian: magic `GNCK`, `u32` version, `u32` record count, then per record a
//! `u32` name length, the UTF-8 name, `u32` rank, `rank` × `u32` dims and the raw
//! scalars. All records share the network's scalar width (f32 or f64); readers detect
//! it from the file length.

use std::path::Path;

use super::network::Network;
use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::tensor_io::Cursor;

pub const MAGIC: &[u8; 4] = b"GNCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn encode<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut records = Vec::new();
    net.visit_params_ref(&mut |name, p| records.push((name.to_string(), p.dims.clone(), p.value.clone())));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, dims, values) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            v.write_le(&mut out);
        }
    }
    out
}

fn decode_with(bytes: &[u8], path: &Path, width: usize) -> Result<Vec<Record>> {
    let mut cur = Cursor::new(bytes, path);
    if cur.take(4)? != MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected GNCK"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format(path, 4, format!("unsupported checkpoint version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = cur.offset();
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec())
            .map_err(|_| Error::format(path, at, "record name is not UTF-8"))?;
        let rank = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = cur.take(n.checked_mul(width).ok_or_else(|| Error::format(path, at, "record too large"))?)?;
        let values = raw
            .chunks_exact(width)
            .map(|c| if width == 4 { f32::read_le(c) as f64 } else { f64::read_le(c) })
            .collect();
        records.push(Record { name, dims, values });
    }
    if !cur.is_done() {
        return Err(Error::format(path, cur.offset(), "trailing bytes after last record"));
    }
    Ok(records)
}

/// Parses a checkpoint. `path` is only used in errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Record>> {
    match decode_with(bytes, path, 4) {
        Ok(r) => Ok(r),
        Err(narrow) => decode_with(bytes, path, 8).map_err(|wide| {
            // report whichever reading got further
            match (&narrow, &wide) {
                (Error::Format { offset: a, .. }, Error::Format { offset: b, .. }) if b > a => wide,
                _ => narrow,
            }
        }),
    }
}

/// Copies `records` into `net`, requiring an exact match of names and dims.
pub fn restore<T: Scalar>(net: &mut Network<T>, records: &[Record]) -> Result<()> {
    let mut expected = Vec::new();
    net.visit_params_ref(&mut |name, p| expected.push((name.to_string(), p.dims.clone())));
    if expected.len() != records.len() {
        return Err(Error::config(format!(
            "checkpoint has {} tensors, network has {}",
            records.len(),
            expected.len()
        )));
    }
    for ((name, dims), r) in expected.iter().zip(records) {
        if *name != r.name || *dims != r.dims {
            return Err(Error::config(format!(
                "checkpoint tensor {} {:?} does not match network tensor {name} {dims:?}",
                r.name, r.dims
            )));
        }
    }
    let mut it = records.iter();
    net.visit_params(&mut |_, p| {
        let r = it.next().unwrap();
        for (v, &x) in p.value.iter_mut().zip(&r.values) {
            *v = T::from_f64(x);
        }
    });
    Ok(())
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load_into<T: Scalar>(net: &mut Network<T>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = decode(&bytes, path)?;
    restore(net, &records)
}
