//! Binary tensor dump: magic `AYDT`, `u32` rank, `u64` extents, then the
//! `f64` payload. All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AYDT";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        msg: msg.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated tensor file"));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic, expected AYDT"));
    }
    let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(8)?.try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| bad("extent overflows usize"))?);
    }
    let n: usize = shape.iter().product();
    let expected = 8 + 8 * rank + 8 * n;
    if bytes.len() != expected {
        return Err(bad(format!(
            "payload size mismatch: {} bytes for shape {shape:?}",
            bytes.len()
        )));
    }
    let data = bytes[8 + 8 * rank..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write_to(t: &Tensor, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(&encode(t))
}

pub fn read_from(mut r: impl Read) -> Result<Tensor> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io("<reader>", e))?;
    decode(&buf)
}

pub fn save(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
