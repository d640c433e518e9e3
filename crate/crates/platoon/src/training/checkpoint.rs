use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use numgrad::Array;
use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::mtfln::{ModelConfig, ModelParams};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub norm: NormStats,
    pub epoch: usize,
    pub seed: u64,
    pub payload_bytes: usize,
    pub arrays: Vec<ArrayEntry>,
}

/// Writes `manifest.json` and `weights.bin` (little-endian `f32`) into `dir`.
pub fn save_checkpoint(params: &ModelParams, dir: impl AsRef<Path>, epoch: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    params.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut payload = Vec::with_capacity(4 * params.count());
    let mut arrays = Vec::with_capacity(params.tensors.len());
    for (name, a) in &params.tensors {
        arrays.push(ArrayEntry {
            name: name.clone(),
            shape: a.shape().to_vec(),
            offset: payload.len(),
        });
        for &x in a.data() {
            payload.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: params.config.clone(),
        norm: params.norm,
        epoch,
        seed,
        payload_bytes: payload.len(),
        arrays,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS);
    fs::write(&wpath, payload).map_err(|e| Error::io(&wpath, e))
}

/// Reads a checkpoint written by [`save_checkpoint`]. Nothing is returned
/// unless the manifest version matches, the payload has exactly the
/// declared length and every array is present with the expected shape.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(ModelParams, Manifest)> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version:?}, expected {FORMAT_VERSION}"
        )));
    }
    let manifest: Manifest = serde_json::from_value(raw)?;
    let wpath = dir.join(WEIGHTS);
    let payload = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    if payload.len() != manifest.payload_bytes {
        return Err(Error::Checkpoint(format!(
            "payload has {} bytes, manifest declares {}",
            payload.len(),
            manifest.payload_bytes
        )));
    }
    let mut tensors = BTreeMap::new();
    for entry in &manifest.arrays {
        let count: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * count;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("array {} runs past the payload end", entry.name)));
        }
        let data = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let a = Array::new(entry.shape.clone(), data).map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
        if tensors.insert(entry.name.clone(), a).is_some() {
            return Err(Error::Checkpoint(format!("array {} listed twice", entry.name)));
        }
    }
    let params = ModelParams {
        config: manifest.config.clone(),
        norm: manifest.norm,
        tensors,
    };
    params
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((params, manifest))
}
