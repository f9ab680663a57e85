//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes   "T2ICKPT\0"
//! version  u32 LE
//! hlen     u64 LE    length of the JSON header
//! header   hlen bytes, UTF-8 JSON (keys sorted)
//! data     f32 LE values of every tensor, in header order
//! ```
//!
//! The header holds the checkpoint kind, step/epoch counters, extra named
//! counters (optimizer steps), a snapshot of the producing configuration and
//! the tensor index (`name`, `shape`, element `offset`). Tensors are stored
//! in name order, so saving a loaded checkpoint reproduces the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"T2ICKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Encoders,
    Gan,
    Classifier,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    step: u64,
    epoch: u64,
    counters: BTreeMap<String, u64>,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub step: u64,
    pub epoch: u64,
    pub counters: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: serde_json::Value) -> Self {
        Self {
            kind,
            step: 0,
            epoch: 0,
            counters: BTreeMap::new(),
            config,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert_all(&mut self, tensors: impl IntoIterator<Item = (String, Tensor)>) {
        self.tensors.extend(tensors);
    }

    /// Tensors under `prefix.`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut data: Vec<u8> = Vec::new();
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.dims().to_vec(),
                offset,
            });
            offset += values.len() as u64;
            for v in values {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            kind: self.kind,
            step: self.step,
            epoch: self.epoch,
            counters: self.counters.clone(),
            config: self.config.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
        let data = &bytes[header_end..];
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize * 4;
            let end = start + n * 4;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("tensor {} runs past the end of the file", entry.name)));
            }
            let values: Vec<f32> = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::from_vec(values, entry.shape.as_slice(), &Device::Cpu)?;
            tensors.insert(entry.name, t);
        }
        Ok(Self {
            kind: header.kind,
            step: header.step,
            epoch: header.epoch,
            counters: header.counters,
            config: header.config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
