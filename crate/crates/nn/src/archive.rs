//! A small self-describing tensor archive.
//!
//! Layout: `b"SNCK"`, format version (`u32` LE), manifest length (`u64` LE),
//! a JSON manifest holding caller metadata and the tensor table, then every
//! tensor's values as little-endian `f64` in table order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::NnError;

const MAGIC: &[u8; 4] = b"SNCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Metadata plus named tensors, as stored on disk.
#[derive(Debug, Clone)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn to_bytes(&self) -> Result<Vec<u8>, NnError> {
        let manifest = Manifest {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Format(e.to_string()))?;
        let data_len: usize = self.tensors.iter().map(|(_, t)| t.numel() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::Format(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a tensor archive"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported archive version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| NnError::Format(e.to_string()))?;
        let mut pos = 16 + len;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes.get(pos..pos + n * 8).ok_or_else(|| bad("truncated tensor data"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            pos += n * 8;
            tensors.push((entry.name, Tensor::new(&entry.shape, data)));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self { meta: manifest.meta, tensors })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
