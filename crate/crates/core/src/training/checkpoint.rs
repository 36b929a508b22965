//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "DPNCKPT\0"
//! version   u32
//! hlen      u32      length of the JSON header
//! header    hlen bytes: {"config", "epoch", "params": [{"name", "shape"}], "adam"}
//! values    f32 per parameter entry, in header order
//! moments   if "adam" is present: first moments then second moments, same order
//! checksum  u64      FNV-1a over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atomic::write_atomic;
use crate::config::ModelConfig;
use crate::diffcore::{AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DPNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub store: ParamStore<f32>,
    pub adam: Option<AdamState<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    params: Vec<ParamHeader>,
    adam: Option<AdamHeader>,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    step: u64,
    lr: f64,
    lr_decay: f64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            params: self
                .store
                .entries()
                .iter()
                .map(|e| ParamHeader {
                    name: e.name.clone(),
                    shape: e.value.shape(),
                })
                .collect(),
            adam: self.adam.as_ref().map(|a| AdamHeader {
                step: a.step,
                lr: a.lr,
                lr_decay: a.lr_decay,
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |t: &Tensor<f32>| {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for e in self.store.entries() {
            put(&e.value);
        }
        if let Some(a) = &self.adam {
            a.first.iter().for_each(&mut put);
            a.second.iter().for_each(&mut put);
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 24 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(corrupt("checksum mismatch (corrupt or truncated file)"));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        let json = body.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        header.config.check()?;
        let mut cursor = &body[16 + hlen..];
        let mut take = |shape: [usize; 2]| -> Result<Tensor<f32>> {
            let n = shape[0] * shape[1];
            if cursor.len() < 4 * n {
                return Err(corrupt("truncated data"));
            }
            let (chunk, rest) = cursor.split_at(4 * n);
            cursor = rest;
            let data = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::new(shape[0], shape[1], data)
        };
        let mut store = ParamStore::new();
        for p in &header.params {
            let t = take(p.shape)?;
            store.insert(p.name.clone(), t);
        }
        let adam = match header.adam {
            Some(a) => {
                let first = header.params.iter().map(|p| take(p.shape)).collect::<Result<Vec<_>>>()?;
                let second = header.params.iter().map(|p| take(p.shape)).collect::<Result<Vec<_>>>()?;
                Some(AdamState {
                    first,
                    second,
                    step: a.step,
                    lr: a.lr,
                    lr_decay: a.lr_decay,
                })
            }
            None => None,
        };
        if !cursor.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            store,
            adam,
        })
    }

    /// Errors unless the stored model can be bound to `cfg`; a dimension
    /// mismatch names both values.
    pub fn check_compatible(&self, cfg: &ModelConfig) -> Result<()> {
        let c = &self.config;
        let pairs = [
            ("d", c.dim, cfg.dim),
            ("layers", c.layers, cfg.layers),
            ("heads", c.heads, cfg.heads),
            ("ff_hidden", c.ff_hidden, cfg.ff_hidden),
        ];
        for (name, have, want) in pairs {
            if have != want {
                return Err(Error::Config(format!(
                    "checkpoint has {name}={have} but the configuration has {name}={want}"
                )));
            }
        }
        if c != cfg {
            return Err(Error::Config(format!(
                "checkpoint model {c:?} differs from configuration {cfg:?}"
            )));
        }
        Ok(())
    }
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
