//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `NSFCKPT1`, a little-endian `u64` manifest
//! length, the JSON manifest, then raw little-endian `f64` payloads at the
//! byte offsets (relative to the payload start) listed in the manifest.
//! Optimizer moments live under the `optim.adam.m/` and `optim.adam.v/`
//! prefixes next to the parameter tensors.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, AutodiffError, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"NSFCKPT1";
const ADAM_M: &str = "optim.adam.m/";
const ADAM_V: &str = "optim.adam.v/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub kind: String,
    pub config: AdamConfig,
    pub step: u64,
    pub skipped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerEntry>,
}

/// In-memory form of a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerEntry>,
}

impl Checkpoint {
    pub fn capture(store: &ParamStore, adam: Option<&Adam>, meta: serde_json::Value) -> Self {
        let mut tensors: Vec<(String, Tensor)> = store
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        let optimizer = adam.map(|a| {
            for (prefix, moments) in [(ADAM_M, &a.m), (ADAM_V, &a.v)] {
                for (p, buf) in store.iter().zip(moments) {
                    let t = Tensor::new(p.value.shape().to_vec(), buf.clone())
                        .expect("moment buffer matches parameter");
                    tensors.push((format!("{prefix}{}", p.name), t));
                }
            }
            OptimizerEntry {
                kind: "adam".into(),
                config: a.config,
                step: a.step,
                skipped: a.skipped,
            }
        });
        Self {
            meta,
            tensors,
            optimizer,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies every parameter of `store` from the checkpoint. A parameter
    /// missing from the checkpoint, or present with a different shape, is an error.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), AutodiffError> {
        let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
        for name in names {
            let t = self
                .tensor(&name)
                .ok_or_else(|| AutodiffError::MissingParameter(name.clone()))?;
            store.set_value(&name, t.clone())?;
        }
        Ok(())
    }

    /// Rebuilds optimizer state for `store`, if the checkpoint carries one.
    pub fn restore_adam(&self, store: &ParamStore) -> Result<Option<Adam>, AutodiffError> {
        let Some(entry) = &self.optimizer else {
            return Ok(None);
        };
        let mut adam = Adam::new(entry.config, store);
        adam.step = entry.step;
        adam.skipped = entry.skipped;
        for (i, p) in store.iter().enumerate() {
            for (prefix, dst) in [(ADAM_M, &mut adam.m), (ADAM_V, &mut adam.v)] {
                let name = format!("{prefix}{}", p.name);
                let t = self
                    .tensor(&name)
                    .ok_or(AutodiffError::MissingParameter(name))?;
                dst[i] = t.data().to_vec();
            }
        }
        Ok(Some(adam))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, AutodiffError> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
                len: t.numel() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: String::from_utf8_lossy(MAGIC).into_owned(),
            meta: self.meta.clone(),
            tensors: entries,
            optimizer: self.optimizer.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutodiffError> {
        let corrupt = |msg: &str| AutodiffError::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing NSFCKPT1 header"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json_end = 16usize
            .checked_add(len)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| corrupt("manifest length exceeds file size"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..json_end])?;
        let payload = &bytes[json_end..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let start = e.offset as usize;
            let end = start + 8 * e.len as usize;
            if end > payload.len() {
                return Err(corrupt(&format!("tensor {} runs past end of file", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
            optimizer: manifest.optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
