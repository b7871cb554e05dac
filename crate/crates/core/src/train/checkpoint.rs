use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::models::{build, ArchSchedule, Model};
use crate::nn::Module;
use crate::tensor::{read_tensor_table, write_tensor_table, NamedArray};

use super::{AdamState, Result, TrainError};

/// Sidecar stored next to the tensor table as `<stem>.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schedule_id: String,
    pub seed: u64,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub adam_step: u64,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub schedule: ArchSchedule,
}

/// Hex SHA-256 of the TOML rendering of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let text = toml::to_string(value).expect("configuration serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

fn params(model: &Model) -> Vec<(String, crate::tensor::Tensor)> {
    let mut out = Vec::new();
    model.visit_params("", &mut |n, t| out.push((n, t.clone())));
    out
}

pub fn save_checkpoint(path: &Path, model: &Model, adam: &AdamState, meta: &CheckpointMeta) -> Result<()> {
    let mut entries = model.state();
    for (i, (name, p)) in params(model).iter().enumerate() {
        entries.push(NamedArray::new(format!("adam.m.{name}"), p.shape().to_vec(), adam.m[i].clone()));
        entries.push(NamedArray::new(format!("adam.v.{name}"), p.shape().to_vec(), adam.v[i].clone()));
    }
    write_tensor_table(path, &entries)?;
    let text = toml::to_string(meta).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    let side = sidecar(path);
    let tmp = side.with_extension("toml.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, &side)?;
    Ok(())
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar(path);
    let text = std::fs::read_to_string(&side)
        .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", side.display())))?;
    toml::from_str(&text).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", side.display())))
}

/// Loads weights, buffers and optimizer moments into an existing model of
/// the same schedule.
pub fn restore_checkpoint(model: &Model, path: &Path) -> Result<(AdamState, CheckpointMeta)> {
    let meta = read_checkpoint_meta(path)?;
    if meta.schedule_id != model.id() || &meta.schedule != model.schedule() {
        return Err(TrainError::ScheduleMismatch {
            checkpoint: meta.schedule_id,
            requested: model.id().to_string(),
        });
    }
    let entries = read_tensor_table(path)?;
    let (adam_entries, state): (Vec<NamedArray>, Vec<NamedArray>) =
        entries.into_iter().partition(|e| e.name.starts_with("adam."));
    model.load_state(&state)?;
    let mut by_name: HashMap<String, Vec<f32>> = adam_entries.into_iter().map(|e| (e.name, e.data)).collect();
    let mut adam = AdamState {
        t: meta.adam_step,
        m: Vec::new(),
        v: Vec::new(),
    };
    for (name, p) in params(model) {
        for (kind, dst) in [("m", &mut adam.m), ("v", &mut adam.v)] {
            let key = format!("adam.{kind}.{name}");
            match by_name.remove(&key) {
                Some(d) if d.len() == p.numel() => dst.push(d),
                _ => return Err(TrainError::Checkpoint(format!("missing or malformed `{key}`"))),
            }
        }
    }
    if let Some(extra) = by_name.keys().min() {
        return Err(TrainError::Checkpoint(format!("unexpected entry `{extra}`")));
    }
    Ok((adam, meta))
}

/// Rebuilds the model recorded in the sidecar and restores it.
pub fn load_checkpoint(path: &Path) -> Result<(Model, AdamState, CheckpointMeta)> {
    let meta = read_checkpoint_meta(path)?;
    let model = build(&meta.schedule, meta.seed)?;
    let (adam, meta) = restore_checkpoint(&model, path)?;
    Ok((model, adam, meta))
}
