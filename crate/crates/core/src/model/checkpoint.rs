//! Binary checkpoint format.
//!
//! ```text
//! b"MSTR1" | u32 LE header length | JSON header | f32 LE tensor data
//! ```
//!
//! The header holds the model config, the vocabulary, a manifest of
//! `{name, shape, offset}` entries (byte offsets into the data section) and
//! the training metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::corpus::file::hex_digest;
use crate::corpus::TokenVocab;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::{Model, TrainingMeta};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MSTR1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: TokenVocab,
    tensors: Vec<TensorEntry>,
    meta: TrainingMeta,
}

/// Serialized checkpoint bytes. Parameters are stored as 32-bit floats.
pub fn checkpoint_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors = model
        .params
        .iter()
        .map(|p| {
            let e = TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset,
            };
            offset += p.value.len() * 4;
            e
        })
        .collect();
    let header = Header {
        config: model.config,
        vocab: model.vocab.clone(),
        tensors,
        meta: model.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 4 + json.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params.iter() {
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_f32c().to_le_bytes());
        }
    }
    Ok(out)
}

/// SHA-256 of the serialized checkpoint, hex encoded.
pub fn checkpoint_hash<T: Scalar>(model: &Model<T>) -> Result<String> {
    Ok(hex_digest(&checkpoint_bytes(model)?))
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC.as_slice())
        .ok_or_else(|| Error::Format("missing MSTR1 magic".into()))?;
    if rest.len() < 4 {
        return Err(Error::Format("truncated checkpoint header length".into()));
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])?;
    let data = &rest[hlen..];
    let mut params = ParamStore::new();
    let mut expected = 0;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset != expected || e.offset + 4 * n > data.len() {
            return Err(Error::Format(format!("tensor {} has a bad offset or is truncated", e.name)));
        }
        let vals: Vec<T> = data[e.offset..e.offset + 4 * n]
            .chunks_exact(4)
            .map(|b| T::from_f32c(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        params.add(e.name.clone(), Tensor::new(&e.shape, vals)?);
        expected += 4 * n;
    }
    if expected != data.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes",
            data.len() - expected
        )));
    }
    if header.vocab.len() != header.config.vocab_size {
        return Err(Error::Format("vocabulary size disagrees with config".into()));
    }
    Model::from_parts(header.config, header.vocab, params, header.meta)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
