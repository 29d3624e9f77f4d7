//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                        |
//! |------------------|------------------------------------------------|
//! | 4                | magic `BSCG`                                   |
//! | 4                | `u32` format version (currently 1)             |
//! | 8                | `u64` length `L` of the JSON header            |
//! | `L`              | UTF-8 JSON header                              |
//! | rest             | concatenated `f32` tensor blobs                |
//!
//! The header is `{format_version, fingerprint, model_config, tensors}`
//! where `fingerprint` is the SHA-256 (hex) of the compact JSON encoding of
//! `model_config` and each tensor entry is `{name, shape, offset}` with
//! `offset` counted in bytes from the start of the blob section. Tensors are
//! written in parameter creation order, each blob row-major `(n, c, h, w)`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sod_tensor::{ParamStore, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::network::Network;

pub const MAGIC: &[u8; 4] = b"BSCG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    fingerprint: String,
    model_config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Decoded contents of a parameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub fingerprint: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

/// SHA-256 hex digest of the configuration's compact JSON encoding.
pub fn fingerprint(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes every parameter of `store`.
pub fn encode(config: &ModelConfig, store: &ParamStore<f32>) -> Vec<u8> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0u64;
    for (_, p) in store.iter() {
        tensors.push(TensorEntry { name: p.name.clone(), shape: p.shape().dims(), offset });
        offset += 4 * p.value.len() as u64;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        fingerprint: fingerprint(config),
        model_config: config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a parameter file held in memory. `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("missing BSCG magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let blob_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad(format!("header length {header_len} exceeds file size")))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..blob_start]).map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.format_version != version {
        return Err(bad("header version disagrees with the preamble".into()));
    }
    let blobs = &bytes[blob_start..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let len: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start
            .checked_add(4 * len)
            .filter(|&e| e <= blobs.len())
            .ok_or_else(|| bad(format!("tensor `{}` runs past the end of the file", entry.name)))?;
        let data = blobs[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(entry.shape, data).map_err(|e| bad(e.to_string()))?;
        tensors.push((entry.name, t));
    }
    Ok(Checkpoint { model_config: header.model_config, fingerprint: header.fingerprint, tensors })
}

pub fn save(path: &Path, config: &ModelConfig, store: &ParamStore<f32>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, encode(config, store)).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes, path)
}

impl Checkpoint {
    /// Overwrites every parameter of a network built from `config`.
    ///
    /// Fails if the checkpoint was written for another configuration, or if
    /// any tensor is missing, unknown or of the wrong shape.
    pub fn apply(&self, config: &ModelConfig, store: &mut ParamStore<f32>, path: &Path) -> Result<()> {
        let expected = fingerprint(config);
        if self.fingerprint != expected || fingerprint(&self.model_config) != self.fingerprint {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!(
                    "configuration fingerprint {} does not match the model's {expected}",
                    self.fingerprint
                ),
            });
        }
        self.load_scoped(store, "", path)
    }

    /// Loads only the encoder weights, e.g. from a pretrained file or from a
    /// checkpoint of another module selection. Tensors outside the encoder
    /// are ignored; encoder tensors must match exactly.
    pub fn apply_backbone(&self, store: &mut ParamStore<f32>, path: &Path) -> Result<()> {
        self.load_scoped(store, "backbone.", path)
    }

    fn load_scoped(&self, store: &mut ParamStore<f32>, scope: &str, path: &Path) -> Result<()> {
        let scoped: Vec<(String, Tensor<f32>)> =
            self.tensors.iter().filter(|(n, _)| n.starts_with(scope)).cloned().collect();
        store
            .load_named(&scoped, scope)
            .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })
    }

    /// Rebuilds the network the checkpoint was written for.
    pub fn instantiate(&self, path: &Path) -> Result<(Network, ParamStore<f32>)> {
        let (net, mut store) = Network::init::<f32>(&self.model_config, 0)?;
        self.apply(&self.model_config, &mut store, path)?;
        Ok((net, store))
    }
}
