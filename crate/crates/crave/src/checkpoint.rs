//! Checkpoint format: versioned header, the canonical model configuration
//! with its SHA-256, free-form metadata, then named flat f32 parameter
//! blobs. Loading re-hashes the embedded configuration and rejects
//! mismatches.

use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::model::{CraveModel, ModelConfig, ModelError, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRAVECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint file: {0}")]
    BadFormat(String),
    #[error("config hash mismatch: stored {stored}, computed {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn config_hash(cfg: &ModelConfig) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(cfg.canonical().as_bytes());
    hasher.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialises configuration, metadata and parameters. Byte-identical for
/// identical inputs.
pub fn encode(cfg: &ModelConfig, params: &ParamStore, meta: &str) -> Vec<u8> {
    let config_text = cfg.canonical();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&config_hash(cfg));
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save(path: &Path, cfg: &ModelConfig, params: &ParamStore, meta: &str) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(cfg, params, meta))?;
    Ok(())
}

pub struct LoadedCheckpoint {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub meta: String,
}

impl LoadedCheckpoint {
    pub fn into_model(self) -> Result<CraveModel, ModelError> {
        CraveModel::from_parts(self.cfg, self.params)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::BadFormat("truncated checkpoint".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| CheckpointError::BadFormat(e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<LoadedCheckpoint, CheckpointError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadFormat("missing CRAVECKP magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadFormat(format!("unsupported version {version}")));
    }
    let config_text = cur.string()?;
    let meta = cur.string()?;
    let stored_hash: [u8; 32] = cur.take(32)?.try_into().unwrap();
    // Hash the embedded text before parsing so any tampering is reported as
    // a hash mismatch rather than a parse error.
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let computed: [u8; 32] = hasher.finalize().into();
    if computed != stored_hash {
        return Err(CheckpointError::HashMismatch {
            stored: hex(&stored_hash),
            computed: hex(&computed),
        });
    }
    let cfg = ModelConfig::parse(&config_text)?;
    let n_params = cur.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let name = cur.string()?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let len: usize = if shape.is_empty() { 1 } else { shape.iter().product() };
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let raw = cur.take(4)?;
            data.push(f32::from_le_bytes(raw.try_into().unwrap()) as f64);
        }
        let tensor = match shape.len() {
            0 => Tensor::scalar(data[0]),
            1 => Tensor::vector(data),
            2 => Tensor::matrix(shape[0], shape[1], data),
            3 => Tensor::tokens(shape[0], shape[1], shape[2], data),
            r => return Err(CheckpointError::BadFormat(format!("unsupported rank {r}"))),
        };
        params.push(&name, tensor);
    }
    if cur.pos != bytes.len() {
        return Err(CheckpointError::BadFormat("trailing bytes".into()));
    }
    Ok(LoadedCheckpoint { cfg, params, meta })
}

pub fn load(path: &Path) -> Result<LoadedCheckpoint, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
