use super::{malformed, with_path, IoError};
use crate::element::{DType, Element};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const TNSR_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TNSR";

/// A tensor read from disk in whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    /// Converts to `E`, exact when the stored precision matches.
    pub fn into_tensor<E: Element>(self) -> Tensor<E> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

/// Writes `magic, version, dtype, rank, dims..., payload`, all little-endian.
pub fn write_tnsr<E: Element, W: Write>(t: &Tensor<E>, mut w: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * t.rank() + t.len() * E::DTYPE.size());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&TNSR_VERSION.to_le_bytes());
    buf.extend_from_slice(&E::DTYPE.code().to_le_bytes());
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)
}

fn u32_at(bytes: &[u8], offset: usize) -> Result<u32, IoError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| malformed("TNSR", offset, "truncated header"))
}

/// Parses one TNSR blob at the start of `bytes`; returns it and its length.
pub fn read_tensor_bytes(bytes: &[u8]) -> Result<(AnyTensor, usize), IoError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(malformed("TNSR", 0, "missing TNSR magic"));
    }
    let version = u32_at(bytes, 4)?;
    if version != TNSR_VERSION {
        return Err(IoError::Version {
            format: "TNSR",
            version,
        });
    }
    let code = u32_at(bytes, 8)?;
    let dtype = DType::from_code(code).ok_or_else(|| malformed("TNSR", 8, format!("unknown dtype code {code}")))?;
    let rank = u32_at(bytes, 12)? as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut off = 16;
    for _ in 0..rank {
        shape.push(u32_at(bytes, off)? as usize);
        off += 4;
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| malformed("TNSR", 16, "element count overflows"))?;
    let end = n
        .checked_mul(dtype.size())
        .and_then(|b| b.checked_add(off))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| malformed("TNSR", off, format!("payload of {n} elements is truncated")))?;
    let payload = &bytes[off..end];
    let t = match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(shape, decode::<f32>(payload))?),
        DType::F64 => AnyTensor::F64(Tensor::new(shape, decode::<f64>(payload))?),
    };
    Ok((t, end))
}

fn decode<E: Element>(payload: &[u8]) -> Vec<E> {
    payload.chunks_exact(E::DTYPE.size()).map(E::read_le).collect()
}

pub fn read_tnsr<R: Read>(mut r: R) -> Result<AnyTensor, IoError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (t, used) = read_tensor_bytes(&bytes)?;
    if used != bytes.len() {
        return Err(malformed("TNSR", used, "trailing bytes after payload"));
    }
    Ok(t)
}

pub fn write_tensor<E: Element>(path: impl AsRef<Path>, t: &Tensor<E>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_tnsr(t, &mut buf)?;
    with_path(path, std::fs::write(path, buf))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor, IoError> {
    let path = path.as_ref();
    let bytes = with_path(path, std::fs::read(path))?;
    read_tnsr(bytes.as_slice())
}
