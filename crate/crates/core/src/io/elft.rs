//! ELFT tensor files.
//!
//! Layout, all little-endian:
//!
//! | offset      | size        | field                        |
//! |-------------|-------------|------------------------------|
//! | 0           | 4           | magic `b"ELFT"`              |
//! | 4           | 4           | version, `u32` = 1           |
//! | 8           | 1           | dtype, `u8` (0 = `f32`)      |
//! | 9           | 1           | rank, `u8`                   |
//! | 10          | 8 * rank    | dims, `u64` each             |
//! | 10 + 8*rank | 4 * numel   | row-major `f32` payload      |
//!
//! A file may hold several records back to back (`params.bin`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ELFT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Append one record to `out`. Values are rounded to `f32`.
pub fn encode_into(tensor: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    let rank = u8::try_from(tensor.rank())
        .map_err(|_| Error::Domain(format!("rank {} does not fit the format", tensor.rank())))?;
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(rank);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(4 * tensor.numel());
    for &v in tensor.data() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Domain(format!("value {v} is not representable as a finite f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

pub fn encode(tensor: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(10 + 8 * tensor.rank() + 4 * tensor.numel());
    encode_into(tensor, &mut out)?;
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    bytes.get(at..at + len).ok_or_else(|| {
        format_err(
            bytes.len(),
            format!("truncated {what}: expected {len} bytes at offset {at}, found {}", bytes.len().saturating_sub(at)),
        )
    })
}

/// Decode the record starting at `start`; returns it and the offset just
/// past it.
pub fn decode_at(bytes: &[u8], start: usize) -> Result<(Tensor, usize)> {
    let magic = take(bytes, start, 4, "magic")?;
    if magic != MAGIC {
        return Err(format_err(start, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = u32::from_le_bytes(take(bytes, start + 4, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format_err(start + 4, format!("unsupported version {version}")));
    }
    let dtype = take(bytes, start + 8, 1, "dtype")?[0];
    if dtype != DTYPE_F32 {
        return Err(format_err(start + 8, format!("unsupported dtype code {dtype}")));
    }
    let rank = take(bytes, start + 9, 1, "rank")?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut at = start + 10;
    let mut numel: usize = 1;
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(bytes, at, 8, "dims")?.try_into().expect("8 bytes"));
        let d = usize::try_from(d)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| format_err(at, format!("invalid dimension {d}")))?;
        numel = numel
            .checked_mul(d)
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| format_err(at, "payload size overflows"))?;
        shape.push(d);
        at += 8;
    }
    let want = 4 * numel;
    let have = bytes.len().saturating_sub(at);
    if have < want {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {want} bytes, found {have}"),
        ));
    }
    let mut data = Vec::with_capacity(numel);
    for (i, c) in bytes[at..at + want].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(format_err(at + 4 * i, "non-finite payload value"));
        }
        data.push(v as f64);
    }
    Ok((Tensor::new(&shape, data)?, at + want))
}

/// Decode exactly one record; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let (t, end) = decode_at(bytes, 0)?;
    if end != bytes.len() {
        return Err(format_err(end, format!("{} trailing bytes", bytes.len() - end)));
    }
    Ok(t)
}

pub fn decode_all(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let (t, next) = decode_at(bytes, at)?;
        out.push(t);
        at = next;
    }
    Ok(out)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn elft_write(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensor)?).map_err(|e| Error::io(path, e))
}

pub fn elft_read(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&read_bytes(path.as_ref())?)
}

pub fn elft_write_all<'a>(tensors: impl IntoIterator<Item = &'a Tensor>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for t in tensors {
        encode_into(t, &mut out)?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn elft_read_all(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    decode_all(&read_bytes(path.as_ref())?)
}
