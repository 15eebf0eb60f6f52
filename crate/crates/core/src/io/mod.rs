//! Files: TNSR tensors, 8-bit PGM/PPM images and model checkpoints.

mod checkpoint;
mod pnm;
mod tnsr;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use pnm::{
    byte_to_unit, decode_pnm, encode_pnm, read_image, read_mask, unit_to_byte, write_image,
    write_mask, PnmImage,
};
pub use tnsr::{read_tensor, read_tensor_bytes, read_tnsr, write_tensor, write_tnsr, AnyTensor, TNSR_VERSION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed {format} data at byte {offset}: {detail}")]
    Malformed {
        format: &'static str,
        offset: usize,
        detail: String,
    },
    #[error("unsupported {format} version {version}")]
    Version { format: &'static str, version: u32 },
    #[error("tensor: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("model: {0}")]
    Model(#[from] crate::models::ModelError),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
}

pub(crate) fn malformed(format: &'static str, offset: usize, detail: impl Into<String>) -> IoError {
    IoError::Malformed {
        format,
        offset,
        detail: detail.into(),
    }
}

pub(crate) fn with_path<T>(path: &std::path::Path, r: std::io::Result<T>) -> Result<T, IoError> {
    r.map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}
