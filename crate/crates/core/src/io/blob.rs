//! Feature blob: `b"SRF1"`, `u32` count, `u32` dim, then `count * dim`
//! little-endian `f32` values, row per vector.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"SRF1";
const HEADER_LEN: usize = 12;

/// Dense, indexed store of equal-length feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        FeatureStore {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut store = FeatureStore::new(dim);
        for row in rows {
            store.push(row)?;
        }
        Ok(store)
    }

    /// Appends a vector and returns its index.
    pub fn push(&mut self, values: &[f32]) -> Result<u32> {
        if values.len() != self.dim {
            return Err(Error::dim("feature vector", self.dim, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature vector has non-finite values".into()));
        }
        let idx = self.len() as u32;
        self.data.extend_from_slice(values);
        Ok(idx)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: u32) -> Option<&[f32]> {
        let i = index as usize;
        (i < self.len()).then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobHeader {
    pub count: usize,
    pub dim: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<BlobHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!(
                "truncated header: expected {HEADER_LEN} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "bad magic, expected SRF1"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    Ok(BlobHeader { count, dim })
}

/// Reads only the 12-byte header; used to validate references without
/// loading the payload.
pub fn read_blob_header(path: &Path) -> Result<BlobHeader> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(HEADER_LEN);
    file.by_ref()
        .take(HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    parse_header(path, &buf)
}

pub fn decode_feature_blob(path: &Path, bytes: &[u8]) -> Result<FeatureStore> {
    let BlobHeader { count, dim } = parse_header(path, bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let expected = count * dim * 4;
    if payload.len() != expected {
        // Distinguish a per-vector dimension mismatch from plain truncation.
        if count > 0 && payload.len().is_multiple_of(4 * count) && payload.len() / (4 * count) != dim {
            return Err(Error::format(
                path,
                format!(
                    "dim mismatch: header declares dim {dim}, payload holds {count} vectors of dim {}",
                    payload.len() / (4 * count)
                ),
            ));
        }
        return Err(Error::format(
            path,
            format!(
                "truncated payload: expected {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-finite value in vector {} at offset {}", i / dim.max(1), i % dim.max(1)),
        ));
    }
    Ok(FeatureStore { dim, data })
}

pub fn encode_feature_blob(store: &FeatureStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + store.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    out.extend_from_slice(&(store.dim as u32).to_le_bytes());
    for v in &store.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_feature_blob(path: &Path) -> Result<FeatureStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_blob(path, &bytes)
}

pub fn write_feature_blob(store: &FeatureStore, path: &Path) -> Result<()> {
    fs::write(path, encode_feature_blob(store)).map_err(|e| Error::io(path, e))
}
