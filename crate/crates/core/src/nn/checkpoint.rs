//! Checkpoints: a JSON manifest plus one raw little-endian `f32` blob next to it.
//!
//! `model.json` pairs with `model.bin`. Offsets in the manifest are byte offsets
//! into the blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::nets::{NetConfig, NetKind, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub kind: NetKind,
    pub net: NetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CheckpointConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Manifest and blob bytes for `net`; parameters are stored as `f32`.
pub fn encode(net: &Network) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut blob = Vec::with_capacity(net.params().count() * 4);
    let mut tensors = Vec::new();
    for t in net.params().tensors() {
        tensors.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset: blob.len() });
        for &v in &t.data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        config: CheckpointConfig { kind: net.kind(), net: net.config().clone() },
        tensors,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    Ok((json, blob))
}

pub fn decode(manifest: &[u8], blob: &[u8]) -> Result<Network> {
    let m: Manifest = serde_json::from_slice(manifest)?;
    let mut net = Network::new(m.config.kind, m.config.net.clone(), 0)?;
    let mut params = net.params().clone();
    if m.tensors.len() != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, architecture needs {}",
            m.tensors.len(),
            params.len()
        )));
    }
    for entry in &m.tensors {
        let t = params
            .by_name_mut(&entry.name)
            .ok_or_else(|| Error::Format(format!("unknown tensor {}", entry.name)))?;
        if t.shape != entry.shape {
            return Err(Error::Format(format!(
                "tensor {} has shape {:?}, expected {:?}",
                entry.name, entry.shape, t.shape
            )));
        }
        let end = entry.offset + 4 * t.data.len();
        let bytes = blob
            .get(entry.offset..end)
            .ok_or_else(|| Error::Format(format!("tensor {} runs past the blob", entry.name)))?;
        for (dst, c) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        }
    }
    net.set_params(params)?;
    Ok(net)
}

pub fn save(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    let path = path.as_ref();
    let (json, blob) = encode(net)?;
    fs::write(path, json)?;
    fs::write(blob_path(path), blob)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let json = fs::read(path)?;
    let blob = fs::read(blob_path(path))?;
    decode(&json, &blob)
}
