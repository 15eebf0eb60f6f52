use super::tnsr::{read_tensor_bytes, write_tnsr};
use super::{malformed, with_path, IoError};
use crate::element::Element;
use crate::models::{ArchitectureSpec, ModelBundle, TrainingMetadata, Variant};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"GRCK";

#[derive(Serialize, Deserialize)]
struct Header {
    variant: Variant,
    architecture: ArchitectureSpec,
    metadata: TrainingMetadata,
    /// Parameter name, byte offset into the blob section, blob length.
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: usize,
    length: usize,
}

/// `GRCK`, version (u32 LE), header length (u32 LE), UTF-8 JSON header,
/// then the TNSR blobs of all parameters in name order.
pub fn write_checkpoint<E: Element>(model: &ModelBundle<E>) -> Result<Vec<u8>, IoError> {
    let mut blobs = Vec::new();
    let mut tensors = Vec::with_capacity(model.params.len());
    for (name, t) in &model.params {
        let offset = blobs.len();
        write_tnsr(t, &mut blobs)?;
        tensors.push(TensorEntry {
            name: name.clone(),
            offset,
            length: blobs.len() - offset,
        });
    }
    let header = serde_json::to_vec(&Header {
        variant: model.variant,
        architecture: model.arch.clone(),
        metadata: model.metadata.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + blobs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blobs);
    Ok(out)
}

pub fn read_checkpoint<E: Element>(bytes: &[u8]) -> Result<ModelBundle<E>, IoError> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(malformed("checkpoint", 0, "missing GRCK magic"));
    }
    let u32_at = |o: usize| {
        bytes
            .get(o..o + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| malformed("checkpoint", o, "truncated preamble"))
    };
    let version = u32_at(4)?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::Version {
            format: "checkpoint",
            version,
        });
    }
    let hlen = u32_at(8)? as usize;
    let hbytes = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| malformed("checkpoint", 12, "truncated header"))?;
    let header: Header = serde_json::from_slice(hbytes)?;
    let base = 12 + hlen;
    let mut params = BTreeMap::new();
    for e in &header.tensors {
        let start = base + e.offset;
        let blob = bytes
            .get(start..start + e.length)
            .ok_or_else(|| malformed("checkpoint", start, format!("tensor `{}` is truncated", e.name)))?;
        let (t, used) = read_tensor_bytes(blob)?;
        if used != e.length {
            return Err(malformed("checkpoint", start + used, format!("tensor `{}` has trailing bytes", e.name)));
        }
        params.insert(e.name.clone(), t.into_tensor());
    }
    Ok(ModelBundle::from_parts(
        header.variant,
        header.architecture,
        params,
        header.metadata,
    )?)
}

pub fn save_checkpoint<E: Element>(path: impl AsRef<Path>, model: &ModelBundle<E>) -> Result<(), IoError> {
    let path = path.as_ref();
    let bytes = write_checkpoint(model)?;
    with_path(path, std::fs::write(path, bytes))
}

pub fn load_checkpoint<E: Element>(path: impl AsRef<Path>) -> Result<ModelBundle<E>, IoError> {
    let path = path.as_ref();
    let bytes = with_path(path, std::fs::read(path))?;
    read_checkpoint(&bytes)
}
