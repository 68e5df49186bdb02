//! Versioned single-file parameter checkpoints.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   "W2VCKPT\0"
//! version  u32 LE    currently 1
//! length   u32 LE    byte length of the JSON manifest
//! manifest JSON      {"version", "kind", "config", "tensors": [{"name", "shape"}]}
//! payload  f32 LE    tensors concatenated in manifest order
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"W2VCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// A checkpoint held in memory: manifest plus raw f32 tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(kind: &str, config: serde_json::Value, params: &[&Param<T>]) -> Self {
        let tensors = params
            .iter()
            .map(|p| p.value.data().iter().map(|v| v.to_f64_lossy() as f32).collect())
            .collect();
        let entries = params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect();
        Checkpoint {
            manifest: Manifest {
                version: VERSION,
                kind: kind.to_string(),
                config,
                tensors: entries,
            },
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serialises");
        let payload: usize = self.tensors.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(16 + manifest.len() + 4 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], file: &Path) -> Result<Self> {
        let err = |m: &str| Error::checkpoint(file, m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(err("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(err(&format!("unsupported checkpoint version {version}")));
        }
        let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + mlen).ok_or_else(|| err("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| err(&format!("bad manifest: {e}")))?;
        let mut offset = 16 + mlen;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| err(&format!("truncated payload for tensor {}", entry.name)))?;
            tensors.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
            offset += 4 * n;
        }
        if offset != bytes.len() {
            return Err(err("trailing bytes after payload"));
        }
        Ok(Checkpoint { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }

    pub fn expect_kind(&self, kind: &str, file: &Path) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(Error::checkpoint(
                file,
                format!("expected a {kind} checkpoint, found {}", self.manifest.kind),
            ));
        }
        Ok(())
    }

    /// Copies stored tensors into `params`, matching by position and
    /// checking names and shapes.
    pub fn restore<T: Scalar>(&self, params: Vec<&mut Param<T>>, file: &Path) -> Result<()> {
        if params.len() != self.tensors.len() {
            return Err(Error::checkpoint(
                file,
                format!("expected {} tensors, checkpoint holds {}", params.len(), self.tensors.len()),
            ));
        }
        for ((p, entry), data) in params.into_iter().zip(&self.manifest.tensors).zip(&self.tensors) {
            if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
                return Err(Error::checkpoint(
                    file,
                    format!(
                        "tensor mismatch: model has {} {:?}, checkpoint has {} {:?}",
                        p.name,
                        p.value.shape(),
                        entry.name,
                        entry.shape
                    ),
                ));
            }
            p.value = Tensor::from_vec(&entry.shape, data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect());
        }
        Ok(())
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
