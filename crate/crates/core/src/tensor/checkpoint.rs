//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | content                                     |
//! |--------|------|---------------------------------------------|
//! | 0      | 8    | magic `ONSETTTE`                            |
//! | 8      | 4    | format version (`u32`, currently 1)         |
//! | 12     | 4    | header length `N` in bytes (`u32`)          |
//! | 16     | N    | UTF-8 JSON header                           |
//! | 16+N   | ...  | parameter arrays, little-endian, row-major  |
//!
//! The JSON header has the keys `dtype` (`"f32"` or `"f64"`), `params` (a
//! list of `{name, shape, trainable}` in declaration order) and `model`
//! (free-form model description: layer specs, configuration, metadata).
//! Parameter arrays follow in the order of `params`, each holding
//! `product(shape)` values of `dtype`. Gradients and momentum buffers are not
//! stored.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"ONSETTTE";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header<M> {
    dtype: String,
    params: Vec<ParamEntry>,
    model: M,
}

pub fn encode<T: Scalar, M: Serialize>(model: &M, store: &ParamStore<T>) -> Result<Vec<u8>> {
    let header = Header {
        dtype: T::DTYPE.to_string(),
        params: store
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
        model,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + store.iter().map(|p| p.value.len() * T::BYTES).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in store.iter() {
        for v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn decode<T: Scalar, M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, ParamStore<T>)> {
    let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let json = bytes.get(16..16 + n).ok_or_else(|| bad("truncated header"))?;
    let header: Header<M> = serde_json::from_slice(json)?;
    if header.dtype != T::DTYPE {
        return Err(bad(&format!(
            "stored dtype {} but {} requested",
            header.dtype,
            T::DTYPE
        )));
    }
    let mut offset = 16 + n;
    let mut store = ParamStore::new();
    for entry in header.params {
        let count: usize = entry.shape.iter().product();
        let end = offset + count * T::BYTES;
        let raw = bytes
            .get(offset..end)
            .ok_or_else(|| bad(&format!("truncated data for {}", entry.name)))?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        store.add(entry.name, Tensor::new(entry.shape, data)?, entry.trainable)?;
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header.model, store))
}

pub fn save<T: Scalar, M: Serialize>(path: &Path, model: &M, store: &ParamStore<T>) -> Result<()> {
    crate::io::write_atomic(path, &encode(model, store)?)
}

pub fn load<T: Scalar, M: DeserializeOwned>(path: &Path) -> Result<(M, ParamStore<T>)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}
