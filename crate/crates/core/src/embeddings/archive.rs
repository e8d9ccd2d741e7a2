//! Versioned tensor container.
//!
//! Layout: the 4-byte magic `PSKT`, a little-endian `u32` header length, a
//! UTF-8 JSON header, then a blob of little-endian `f32` values. The header
//! lists every tensor's name, shape and element offset into the blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"PSKT";
pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

/// One named tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::MalformedArchive(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: String,
    #[serde(default)]
    config: serde_json::Value,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

/// Named tensors plus an architecture id, its JSON config and free-form
/// string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    pub architecture: String,
    pub config: serde_json::Value,
    pub metadata: BTreeMap<String, String>,
    tensors: BTreeMap<String, Tensor>,
}

impl TensorArchive {
    pub fn new(architecture: impl Into<String>, config: serde_json::Value) -> Self {
        Self {
            architecture: architecture.into(),
            config,
            metadata: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                actual: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Rejects NaN or infinite values anywhere in the archive.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor `{name}`")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
                len: t.len(),
            });
            offset += t.len();
        }
        let header = Header {
            format_version: ARCHIVE_FORMAT_VERSION,
            architecture: self.architecture.clone(),
            config: self.config.clone(),
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header)?;
        let header_len = u32::try_from(header.len()).map_err(|_| Error::MalformedArchive("header too large".into()))?;
        let mut out = Vec::with_capacity(8 + header.len() + offset * 4);
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |m: &str| Error::MalformedArchive(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != ARCHIVE_MAGIC {
            return Err(malformed("bad magic"));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header_end = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| malformed("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[8..header_end])?;
        if header.format_version != ARCHIVE_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: header.format_version,
                supported: ARCHIVE_FORMAT_VERSION,
            });
        }
        let blob = &bytes[header_end..];
        if !blob.len().is_multiple_of(4) {
            return Err(malformed("blob length is not a multiple of 4"));
        }
        let values = blob.len() / 4;
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let end = e
                .offset
                .checked_add(e.len)
                .filter(|&end| end <= values)
                .ok_or_else(|| Error::MalformedArchive(format!("tensor `{}` exceeds blob", e.name)))?;
            let data = blob[e.offset * 4..end * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.shape, data)
                .map_err(|err| Error::MalformedArchive(format!("tensor `{}`: {err}", e.name)))?;
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(Error::MalformedArchive(format!("duplicate tensor `{}`", e.name)));
            }
        }
        Ok(Self {
            architecture: header.architecture,
            config: header.config,
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized archive, hex encoded.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}
