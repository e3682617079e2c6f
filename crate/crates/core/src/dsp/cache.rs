//! Feature cache files.
//!
//! Layout: the 8-byte magic `ONSETFEA`, a little-endian `u32` header length
//! `N`, `N` bytes of JSON header, then the feature values as little-endian
//! numbers of the header's `dtype`, row-major over `shape`
//! (`frames x n_mels x 3`). The header records `shape`, `hop` (seconds),
//! `dtype` and `source_hash` (hex SHA-256 of the source samples).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{AudioClip, FeatureTensor, N_CHANNELS};
use crate::error::{io_err, Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"ONSETFEA";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub shape: [usize; 3],
    pub hop: f64,
    pub dtype: String,
    pub source_hash: String,
}

/// SHA-256 over the sample rate and the samples as little-endian `f64`.
pub fn source_hash<T: Scalar>(clip: &AudioClip<T>) -> String {
    let mut h = Sha256::new();
    h.update(clip.sample_rate.to_le_bytes());
    for s in &clip.samples {
        h.update(s.as_f64().to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn encode<T: Scalar>(feat: &FeatureTensor<T>, source_hash: &str) -> Result<Vec<u8>> {
    let header = CacheHeader {
        shape: [feat.frames, feat.n_mels, N_CHANNELS],
        hop: feat.hop,
        dtype: T::DTYPE.to_string(),
        source_hash: source_hash.to_string(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + feat.values.len() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &feat.values {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(CacheHeader, FeatureTensor<T>)> {
    let bad = |m: &str| Error::Format(format!("feature cache: {m}"));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: CacheHeader = serde_json::from_slice(bytes.get(12..12 + n).ok_or_else(|| bad("truncated header"))?)?;
    if header.dtype != T::DTYPE {
        return Err(bad(&format!("stored {} but {} requested", header.dtype, T::DTYPE)));
    }
    if header.shape[2] != N_CHANNELS {
        return Err(bad("channel count must be 3"));
    }
    let count: usize = header.shape.iter().product();
    let raw = &bytes[12 + n..];
    if raw.len() != count * T::BYTES {
        return Err(bad("payload size does not match shape"));
    }
    let values = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    let feat = FeatureTensor {
        frames: header.shape[0],
        n_mels: header.shape[1],
        hop: header.hop,
        values,
    };
    Ok((header, feat))
}

pub fn save<T: Scalar>(path: &Path, feat: &FeatureTensor<T>, source_hash: &str) -> Result<()> {
    crate::io::write_atomic(path, &encode(feat, source_hash)?)
}

/// Loads a cache entry if it exists and was computed from `expected_hash`.
pub fn load_if_fresh<T: Scalar>(path: &Path, expected_hash: &str) -> Result<Option<FeatureTensor<T>>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let (header, feat) = decode(&bytes)?;
    Ok((header.source_hash == expected_hash).then_some(feat))
}
