//! Checkpoint directories: `meta.json` plus one `CANT` blob per parameter
//! (`<name>.cant`) and per center bank (`center.<stream>.cant`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CanModel, ModelConfig};
use crate::error::{CanError, Result};
use crate::tensor::{read_blob, write_blob, BlobDtype};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelConfig,
    pub streams: Vec<String>,
    pub params: Vec<String>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(model: &CanModel, dir: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CanError::io(dir, e))?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        streams: model.streams.iter().map(|s| s.name()).collect(),
        params: model.store.iter().map(|(_, p)| p.name.clone()).collect(),
        extra,
    };
    for (_, p) in model.store.iter() {
        write_blob(dir.join(format!("{}.cant", p.name)), &p.value, BlobDtype::F64)?;
    }
    for (s, bank) in model.streams.iter().zip(&model.centers) {
        write_blob(dir.join(format!("center.{}.cant", s.name())), &bank.centers, BlobDtype::F64)?;
    }
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| CanError::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(CanModel, CheckpointMeta)> {
    let dir = dir.as_ref();
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| CanError::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(CanError::Checkpoint(format!(
            "format version {} (expected {})",
            meta.format_version, CHECKPOINT_VERSION
        )));
    }
    let mut model = CanModel::build(meta.config.clone(), 0)?;
    let streams: Vec<String> = model.streams.iter().map(|s| s.name()).collect();
    if streams != meta.streams {
        return Err(CanError::Checkpoint(format!(
            "stream order mismatch: checkpoint {:?}, model {:?}",
            meta.streams, streams
        )));
    }
    let names: Vec<String> = model.store.iter().map(|(_, p)| p.name.clone()).collect();
    if names != meta.params {
        return Err(CanError::Checkpoint("parameter list does not match the model layout".into()));
    }
    for name in &names {
        let id = model.store.id_of(name).expect("listed name");
        let value = read_blob(dir.join(format!("{name}.cant")))?;
        model
            .store
            .set_value(id, value)
            .map_err(|e| CanError::Checkpoint(e.to_string()))?;
    }
    for (s, bank) in streams.iter().zip(model.centers.iter_mut()) {
        let centers = read_blob(dir.join(format!("center.{s}.cant")))?;
        if centers.shape() != bank.centers.shape() {
            return Err(CanError::Checkpoint(format!("center bank {s} has shape {:?}", centers.shape())));
        }
        bank.centers = centers;
    }
    Ok((model, meta))
}
