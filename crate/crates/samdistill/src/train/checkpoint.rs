//! Binary checkpoint container.
//!
//! Layout: the 8 bytes `SAMDCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then the raw
//! tensor payload as little-endian f64. The header holds the config
//! snapshot, step, training dtype, sampler state, optimizer step counts
//! and an index of `{name, shape, offset, len}` (offset and len counted in
//! values). Tensor names are `baseline/...` and `refiner/...` for
//! parameters and `adam/<param>/m`, `adam/<param>/v` for optimizer moments.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::sampler::SamplerState;
use crate::error::{io_err, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAMDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub dtype: String,
    pub sampler: SamplerState,
    pub baseline_opt_steps: u64,
    pub refiner_opt_steps: u64,
    pub tensors: BTreeMap<String, StoredTensor>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerSteps {
    baseline: u64,
    refiner: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    dtype: String,
    sampler: SamplerState,
    optimizer: OptimizerSteps,
    tensors: Vec<IndexEntry>,
}

fn corrupt(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut index = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            index.push(IndexEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
                len: t.values.len(),
            });
            offset += t.values.len();
        }
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            dtype: self.dtype.clone(),
            sampler: self.sampler.clone(),
            optimizer: OptimizerSteps {
                baseline: self.baseline_opt_steps,
                refiner: self.refiner_opt_steps,
            },
            tensors: index,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt(path, "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(path, format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| corrupt(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(path, e))?;
        let payload = &bytes[20 + hlen..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(corrupt(path, format!("{}: shape {:?} vs {} values", e.name, e.shape, e.len)));
            }
            let raw = payload
                .get(e.offset * 8..(e.offset + e.len) * 8)
                .ok_or_else(|| corrupt(path, format!("{}: payload truncated", e.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(e.name, StoredTensor { shape: e.shape, values });
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            dtype: header.dtype,
            sampler: header.sampler,
            baseline_opt_steps: header.optimizer.baseline,
            refiner_opt_steps: header.optimizer.refiner,
            tensors,
        })
    }

    /// Writes atomically: a temporary file in the same directory is renamed
    /// over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, path)
    }
}
