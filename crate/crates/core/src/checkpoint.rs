//! Checkpoint container shared by every trained model.
//!
//! Layout (little-endian): magic `DCKP`, `u32` version (1), `u64` header
//! length `H`, `H` bytes of UTF-8 JSON ([`CheckpointHeader`]), then the
//! concatenated `f32` tensor blobs. Each tensor entry records its element
//! offset into the blob region.

use crate::error::{Error, Result};
use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const CKPT_MAGIC: &[u8; 4] = b"DCKP";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the blob region.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Model family, e.g. `vq-motion`, `lm`, `denoiser`.
    pub kind: String,
    pub config: serde_json::Value,
    pub meta: serde_json::Value,
    /// Hash of `config`; consumers compare it to detect incompatible inputs.
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Short stable hash of a serializable value.
pub fn hash_json(v: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(v).unwrap_or_default();
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        hash_json(&self.config)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut blob: Vec<u8> = Vec::new();
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let vals = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.dims().to_vec(),
                offset,
            });
            offset += vals.len();
            for v in vals {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = CheckpointHeader {
            kind: self.kind.clone(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            config_hash: self.config_hash(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < 16 || &data[..4] != CKPT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
        if data.len() < 16 + hlen {
            return Err(Error::Format("checkpoint header truncated".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&data[16..16 + hlen])?;
        if header.config_hash != hash_json(&header.config) {
            return Err(Error::Incompatible("config hash does not match stored config".into()));
        }
        let blob = &data[16 + hlen..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = 4 * e.offset;
            let end = start + 4 * n;
            if end > blob.len() {
                return Err(Error::Format(format!("tensor {} truncated", e.name)));
            }
            let vals: Vec<f32> = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(e.name, Tensor::from_vec(vals, e.shape, &Device::Cpu)?);
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path)?;
        Self::from_bytes(&data)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Incompatible(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }
}
