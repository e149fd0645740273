//! Single-file JSON checkpoints.
//!
//! Layout: `{"format_version", "config", "metadata", "params": {name: {rows, cols, data}}}`
//! with parameters sorted by their dotted names. Floats use the shortest
//! round-trip representation, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chmm_autodiff::{Matrix, ParamStore};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Archive {
    format_version: u32,
    config: ModelConfig,
    metadata: serde_json::Value,
    params: BTreeMap<String, Tensor>,
}

/// Loaded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub metadata: serde_json::Value,
    pub params: BTreeMap<String, Matrix>,
}

impl Checkpoint {
    /// Copies parameters into `store`, requiring identical names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Mismatch(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let value = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Mismatch(format!("checkpoint lacks tensor '{name}'")))?;
            let slot = store.get_mut(id);
            if slot.dim() != value.dim() {
                return Err(Error::Mismatch(format!(
                    "tensor '{name}' has shape {:?}, model expects {:?}",
                    value.dim(),
                    slot.dim()
                )));
            }
            slot.assign(value);
        }
        Ok(())
    }
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    store: &ParamStore,
    metadata: serde_json::Value,
) -> Result<()> {
    let params = store
        .iter()
        .map(|(name, m)| {
            let data = m.iter().copied().collect();
            (
                name.to_string(),
                Tensor {
                    rows: m.nrows(),
                    cols: m.ncols(),
                    data,
                },
            )
        })
        .collect();
    let archive = Archive {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: config.clone(),
        metadata,
        params,
    };
    let bytes = serde_json::to_vec(&archive)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint. When `expected` is given, the stored configuration
/// must equal it.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| {
            Error::CorruptCheckpoint(format!("{}: no format_version", path.display()))
        })?;
    if found != CHECKPOINT_FORMAT_VERSION as u64 {
        return Err(Error::Version {
            what: "checkpoint format",
            found: found as u32,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let archive: Archive = serde_json::from_value(value)
        .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    if let Some(cfg) = expected {
        if cfg != &archive.config {
            return Err(Error::Mismatch(
                "checkpoint configuration differs from the requested model configuration".into(),
            ));
        }
    }
    let mut params = BTreeMap::new();
    for (name, t) in archive.params {
        let m = Array2::from_shape_vec((t.rows, t.cols), t.data).map_err(|_| {
            Error::CorruptCheckpoint(format!("tensor '{name}' has inconsistent shape"))
        })?;
        params.insert(name, m);
    }
    Ok(Checkpoint {
        config: archive.config,
        metadata: archive.metadata,
        params,
    })
}
