//! Checkpoint files: a JSON manifest plus a companion blob (`<path>.bin`) of
//! little-endian `f32` values. Offsets and lengths count `f32` elements.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::Params;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub params: Params<f32>,
}

pub fn blob_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: &Path, config: &serde_json::Value, params: &Params<f32>) -> Result<()> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_owned(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    let blob = blob_path(path);
    std::fs::write(&blob, params.to_le_bytes()).map_err(|e| Error::io(&blob, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Version(manifest.version));
    }
    let blob_file = blob_path(path);
    let blob = std::fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    let total: usize = manifest.tensors.iter().map(|t| t.len).sum();
    if blob.len() != total * 4 {
        return Err(Error::Corrupted(format!(
            "blob holds {} bytes, manifest describes {} f32 values",
            blob.len(),
            total
        )));
    }
    let mut params = Params::new();
    for t in &manifest.tensors {
        if t.shape.iter().product::<usize>() != t.len || t.offset + t.len > total {
            return Err(Error::Corrupted(format!("tensor entry {} is inconsistent", t.name)));
        }
        let data: Vec<f32> = blob[t.offset * 4..(t.offset + t.len) * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(t.name.clone(), Tensor::from_vec(&t.shape, data)?)?;
    }
    Ok(Checkpoint {
        config: manifest.config,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut p = Params::<f32>::new();
        p.insert("a.W", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap())
            .unwrap();
        p.insert("a.b", Tensor::from_vec(&[2], vec![0.125, 9.0]).unwrap())
            .unwrap();
        let cfg = serde_json::json!({"hidden": 4});
        save_checkpoint(&path, &cfg, &p).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.params, p);
        assert_eq!(ck.config, cfg);

        let blob = blob_path(&path);
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupted(_))));
    }
}
