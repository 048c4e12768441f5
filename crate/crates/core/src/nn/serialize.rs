//! Model file: `FCKM` magic, u32 format version, length-prefixed JSON header,
//! length-prefixed little-endian f32 weight blob, trailing SHA-256 over
//! everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::Architecture;
use super::model::{ModelGraph, ModelMeta};
use crate::dataset::ClassMap;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FCKM";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub format_version: u32,
    pub arch: Architecture,
    pub class_map: ClassMap,
    pub meta: ModelMeta,
    pub tensors: Vec<TensorEntry>,
}

/// Serializes to bytes. Parameters are stored as f32; output is deterministic.
pub fn model_to_bytes<T: Scalar>(model: &ModelGraph<T>) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(model.params().len());
    let mut blob = Vec::with_capacity(model.param_count() * 4);
    let mut offset = 0;
    for (name, p) in model.names().iter().zip(model.params()) {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: p.shape().to_vec(),
            offset,
            len: p.len(),
        });
        offset += p.len();
        for &v in p.data() {
            blob.extend_from_slice(&v.to_f32().expect("finite scalar").to_le_bytes());
        }
    }
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        arch: model.arch().clone(),
        class_map: model.class_map().clone(),
        meta: model.meta().clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(4 + 4 + 8 + json.len() + 8 + blob.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(digest.as_slice());
    Ok(out)
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelGraph<T>> {
    if bytes.len() < 4 + 4 + 8 + 8 + DIGEST_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut pos = 8;
    let json = take_prefixed(body, &mut pos)?;
    let blob = take_prefixed(body, &mut pos)?;
    if pos != body.len() || blob.len() % 4 != 0 {
        return Err(Error::Checksum);
    }
    let format = |detail: String| Error::ModelFormat { version, detail };
    let value: serde_json::Value = serde_json::from_slice(json).map_err(|e| format(e.to_string()))?;
    let header_version = value.get("format_version").and_then(|v| v.as_u64());
    if header_version != Some(u64::from(version)) {
        return Err(format(format!("header declares format_version {header_version:?}")));
    }
    let header: ModelHeader = serde_json::from_value(value).map_err(|e| format(e.to_string()))?;
    let floats = blob.len() / 4;
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let end = t.offset.checked_add(t.len).filter(|&e| e <= floats);
        let Some(end) = end else {
            return Err(format(format!("tensor {} exceeds the weight blob", t.name)));
        };
        if t.shape.iter().product::<usize>() != t.len {
            return Err(format(format!("tensor {} shape {:?} does not hold {} values", t.name, t.shape, t.len)));
        }
        let data = blob[t.offset * 4..end * 4]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        params.push(Tensor::from_vec_finite(&t.shape, data)?);
    }
    let model = ModelGraph::from_parts(header.arch, header.class_map, header.meta, params)?;
    for (stored, expected) in header.tensors.iter().zip(model.names()) {
        if &stored.name != expected {
            return Err(format(format!("tensor {} found where {expected} was expected", stored.name)));
        }
    }
    Ok(model)
}

fn take_prefixed<'a>(body: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    let len_bytes = body.get(*pos..*pos + 8).ok_or(Error::Checksum)?;
    let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
    *pos += 8;
    let end = pos.checked_add(len).filter(|&e| e <= body.len()).ok_or(Error::Checksum)?;
    let s = &body[*pos..end];
    *pos = end;
    Ok(s)
}

pub fn save_model<T: Scalar>(model: &ModelGraph<T>, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<ModelGraph<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
