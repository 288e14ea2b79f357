//! Parameter checkpoints: `VXCK`, a little-endian `u32` index length, a JSON
//! index, then every parameter as little-endian `f32` in index order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::diff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VXCK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Student,
    Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in values.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub kind: ModelKind,
    pub truncation: f64,
    pub config: TrainConfig,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub index: CheckpointIndex,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_store(kind: ModelKind, truncation: f64, config: &TrainConfig, store: &ParamStore) -> Self {
        let mut params = Vec::new();
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, t) in store.iter() {
            params.push(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            tensors.push(t.clone());
        }
        Checkpoint {
            index: CheckpointIndex {
                kind,
                truncation,
                config: config.clone(),
                params,
            },
            tensors,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.index)?;
        let mut out = Vec::with_capacity(8 + json.len() + 4 * self.tensors.iter().map(Tensor::len).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("missing VXCK magic".into()));
        }
        let json_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(8..8 + json_len)
            .ok_or_else(|| Error::Checkpoint("index extends past end of file".into()))?;
        let index: CheckpointIndex = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload = &bytes[8 + json_len..];
        let total: usize = index.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if payload.len() != total * 4 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, index describes {}",
                payload.len(),
                total * 4
            )));
        }
        let mut tensors = Vec::with_capacity(index.params.len());
        for p in &index.params {
            let n: usize = p.shape.iter().product();
            let raw = payload
                .get(p.offset * 4..(p.offset + n) * 4)
                .ok_or_else(|| Error::Checkpoint(format!("parameter {} out of range", p.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            tensors.push(Tensor::new(&p.shape, data)?);
        }
        Ok(Checkpoint { index, tensors })
    }

    /// Writes to a sibling temp file and renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }

    /// Copies every stored parameter whose name passes `filter` into `store`.
    /// Returns the number copied.
    pub fn apply(&self, store: &mut ParamStore, filter: impl Fn(&str) -> bool) -> Result<usize> {
        let mut n = 0;
        for (entry, t) in self.index.params.iter().zip(&self.tensors) {
            if filter(&entry.name) {
                store.set(&entry.name, t.clone())?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Strict load: the store and the checkpoint must name the same parameters.
    pub fn apply_all(&self, store: &mut ParamStore) -> Result<()> {
        if self.index.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model has {}",
                self.index.params.len(),
                store.len()
            )));
        }
        self.apply(store, |_| true).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store.add("a", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.5)).unwrap();
        store.add("b", Tensor::scalar(-1.25)).unwrap();
        let ck = Checkpoint::from_store(ModelKind::Student, 3.0, &TrainConfig::default(), &store);
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        assert!(!path.with_extension("tmp").exists());
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.index, ck.index);
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(&[2, 3])).unwrap();
        other.add("b", Tensor::scalar(0.0)).unwrap();
        back.apply_all(&mut other).unwrap();
        assert_eq!(other.by_name("a"), store.by_name("a"));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(Checkpoint::decode(b"VXL1\0\0\0\0").is_err());
        let store = ParamStore::new();
        let mut bytes = Checkpoint::from_store(ModelKind::Completion, 3.0, &TrainConfig::default(), &store)
            .encode()
            .unwrap();
        bytes.push(0);
        assert!(Checkpoint::decode(&bytes).is_err());
    }
}
