//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, JSON header
//! (descriptor, parameter layout, metadata), `u64` parameter count, `f64` LE
//! parameters, and a SHA-256 of everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamBlock;
use super::{AnyModel, Differentiable, ModelDescriptor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CDCKPT\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    descriptor: ModelDescriptor,
    layout: Vec<ParamBlock>,
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: ModelDescriptor,
    pub layout: Vec<ParamBlock>,
    pub metadata: BTreeMap<String, String>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn of(model: &dyn Differentiable, metadata: BTreeMap<String, String>) -> Self {
        Self {
            descriptor: model.descriptor(),
            layout: model.parameters().layout().to_vec(),
            metadata,
            params: model.parameters().values.clone(),
        }
    }

    /// Rebuilds the model; when `expected` is given the stored descriptor must
    /// equal it.
    pub fn into_model(self, expected: Option<&ModelDescriptor>) -> Result<AnyModel> {
        if let Some(want) = expected {
            if *want != self.descriptor {
                return Err(Error::config(format!(
                    "checkpoint holds {:?} but {:?} was requested",
                    self.descriptor, want
                )));
            }
        }
        let mut model = AnyModel::build(&self.descriptor, 0)?;
        let target = model.as_differentiable_mut().parameters_mut();
        if target.layout() != self.layout.as_slice() {
            return Err(Error::Format("checkpoint parameter layout differs from the architecture".into()));
        }
        target.set_values(self.params)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            descriptor: self.descriptor.clone(),
            layout: self.layout.clone(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut bytes = Vec::with_capacity(64 + json.len() + 8 * self.params.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("checkpoint {what}"));
        if bytes.len() < 8 + 4 + 8 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("magic missing"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let read_u64 = |at: usize| -> Result<u64> {
            body.get(at..at + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| bad("truncated"))
        };
        let hlen = read_u64(12)? as usize;
        let hend = 20usize.checked_add(hlen).ok_or_else(|| bad("header length overflow"))?;
        let json = body.get(20..hend).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(e.to_string()))?;
        let count = read_u64(hend)? as usize;
        let payload = &body[hend + 8..];
        if payload.len() != count.checked_mul(8).ok_or_else(|| bad("parameter count overflow"))? {
            return Err(bad("payload length mismatch"));
        }
        let params = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            descriptor: header.descriptor,
            layout: header.layout,
            metadata: header.metadata,
            params,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
