//! Checkpoint layout: `DENC` magic, format version (u32 LE), JSON header
//! length (u64 LE) and bytes, then every parameter tensor in header order.

use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DualEncoder, EncoderError, Hyperparams, Vocabulary};
use crate::fsutil::write_atomic;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"DENC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    hyperparams: Hyperparams,
    vocabulary: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(msg: impl Into<String>) -> EncoderError {
    EncoderError::CorruptCheckpoint(msg.into())
}

pub fn checkpoint_bytes(model: &DualEncoder) -> Vec<u8> {
    let params = model.params();
    let header = Header {
        hyperparams: model.hyper.clone(),
        vocabulary: model.vocab.entries().to_vec(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in params {
        t.write_to(&mut out).expect("writing to a Vec cannot fail");
    }
    out
}

/// Hex SHA-256 of the checkpoint encoding; identifies a model.
pub fn model_digest(model: &DualEncoder) -> String {
    hex::encode(Sha256::digest(checkpoint_bytes(model)))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<DualEncoder, EncoderError> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt("file too short for magic"))?;
    if &magic != MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)
        .map_err(|_| corrupt("missing version"))?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "unsupported version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| corrupt("missing header length"))?;
    let len = u64::from_le_bytes(len) as usize;
    let start = r.position() as usize;
    if bytes.len() < start || bytes.len() - start < len {
        return Err(corrupt(format!("header length {len} exceeds file")));
    }
    let header: Header = serde_json::from_slice(&bytes[start..start + len])
        .map_err(|e| corrupt(format!("header: {e}")))?;
    r.set_position((start + len) as u64);

    let vocab = Vocabulary::from_tokens(header.vocabulary);
    let mut model =
        DualEncoder::new(vocab, header.hyperparams, 0).map_err(|e| corrupt(e.to_string()))?;
    let expected = model.params();
    if expected.len() != header.tensors.len() {
        return Err(corrupt(format!(
            "header lists {} tensors, model has {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for ((name, t), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(corrupt(format!(
                "unexpected tensor {} {:?}",
                entry.name, entry.shape
            )));
        }
    }
    drop(expected);
    let mut values = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let t = Tensor::<f32>::read_from(&mut r)
            .map_err(|e| corrupt(format!("tensor {}: {e}", entry.name)))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(corrupt(format!(
                "tensor {} has shape {:?}",
                entry.name,
                t.shape()
            )));
        }
        values.push(t);
    }
    if (r.position() as usize) != bytes.len() {
        return Err(corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.position() as usize
        )));
    }
    model.set_params(&values)?;
    Ok(model)
}

pub fn save_checkpoint(model: &DualEncoder, path: &Path) -> Result<(), EncoderError> {
    write_atomic(path, &checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DualEncoder, EncoderError> {
    model_from_bytes(&std::fs::read(path)?)
}
