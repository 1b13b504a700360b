use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::persist::{json_hash, read_archive, write_archive};
use crate::scoring::{Model, ModelConfig, ModuleId};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Sidecar describing a parameter blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub module_id: ModuleId,
    pub version: u32,
    pub config_hash: String,
    pub epoch: usize,
    pub metrics: BTreeMap<String, f64>,
    pub blob_sha256: String,
    pub config: ModelConfig,
}

pub fn config_hash(config: &ModelConfig) -> String {
    json_hash(config)
}

/// Parameter blob path for a manifest path (`x.json` → `x.params`).
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("params")
}

/// Writes the model's parameters and buffers next to a JSON manifest at `path`.
pub fn save_checkpoint(model: &Model, epoch: usize, metrics: BTreeMap<String, f64>, path: &Path) -> Result<CheckpointManifest> {
    let p = &model.params;
    let entries: Vec<(String, &Mat)> = p.ids().map(|id| (p.name(id).to_string(), p.get(id))).collect();
    let sha = write_archive(&blob_path(path), &entries)?;
    let manifest = CheckpointManifest {
        module_id: model.id,
        version: CHECKPOINT_VERSION,
        config_hash: config_hash(&model.config),
        epoch,
        metrics,
        blob_sha256: sha,
        config: model.config.clone(),
    };
    write_json(path, &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let manifest: CheckpointManifest = read_json(path)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let recomputed = config_hash(&manifest.config);
    if recomputed != manifest.config_hash {
        return Err(Error::ConfigHash {
            found: recomputed,
            expected: manifest.config_hash,
        });
    }
    Ok(manifest)
}

/// Loads a checkpoint; with `expected` set, the stored config must hash
/// identically.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<(Model, CheckpointManifest)> {
    let manifest = read_manifest(path)?;
    if let Some(cfg) = expected {
        let want = config_hash(cfg);
        if want != manifest.config_hash {
            return Err(Error::ConfigHash {
                found: manifest.config_hash,
                expected: want,
            });
        }
    }
    let blob = read_archive(&blob_path(path), Some(&manifest.blob_sha256))?;
    let mut model = Model::new(manifest.module_id, &manifest.config, 0)?;
    let mut seen = HashSet::new();
    for (name, value) in blob {
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| Error::Integrity(format!("{}: unknown parameter {name}", path.display())))?;
        let slot = model.params.get_mut(id);
        if slot.dim() != value.dim() {
            return Err(Error::Integrity(format!(
                "{}: parameter {name} is {:?}, expected {:?}",
                path.display(),
                value.dim(),
                slot.dim()
            )));
        }
        *slot = value;
        seen.insert(name);
    }
    if seen.len() != model.params.len() {
        return Err(Error::Integrity(format!(
            "{}: {} of {} parameters present",
            path.display(),
            seen.len(),
            model.params.len()
        )));
    }
    Ok((model, manifest))
}
