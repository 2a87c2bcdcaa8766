//! `EEGM` v1 parameter blob.
//!
//! ```text
//! "EEGM" | u32 version = 1 | u32 descriptor_len | descriptor JSON (utf-8)
//! u64 n_params | n_params f32
//! ```
//!
//! The descriptor is a JSON object whose `tag` field names the payload
//! (`model`, `codebook`, `regressor`).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::network::Network;
use super::spec::ModelSpec;
use super::train::{EpochRecord, TrainedModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EEGM";
pub const VERSION: u32 = 1;

pub fn write_blob<W: Write>(mut w: W, descriptor: &Value, params: &[f64]) -> Result<()> {
    let desc = serde_json::to_vec(descriptor)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(&desc)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 4);
    for &p in params {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_blob<R: Read>(mut r: R) -> Result<(Value, Vec<f64>)> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("not an EEGM blob".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported EEGM version {version}")));
    }
    let len = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut desc = vec![0u8; len];
    r.read_exact(&mut desc)?;
    let descriptor: Value = serde_json::from_slice(&desc)?;
    let mut n = [0u8; 8];
    r.read_exact(&mut n)?;
    let n = u64::from_le_bytes(n) as usize;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((descriptor, params))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDescriptor {
    tag: String,
    spec: ModelSpec,
    selected_epoch: Option<usize>,
}

pub fn save_model<W: Write>(w: W, model: &TrainedModel) -> Result<()> {
    let desc = ModelDescriptor {
        tag: "model".into(),
        spec: model.spec().clone(),
        selected_epoch: model.selected_epoch,
    };
    write_blob(w, &serde_json::to_value(desc)?, model.network.params())
}

/// Loads a model blob. Parameters round-trip through `f32`; the training
/// history is not stored.
pub fn load_model<R: Read>(r: R) -> Result<TrainedModel> {
    let (desc, params) = read_blob(r)?;
    if desc.get("tag").and_then(Value::as_str) != Some("model") {
        return Err(Error::Format("EEGM blob does not hold a model".into()));
    }
    let desc: ModelDescriptor = serde_json::from_value(desc)?;
    let mut model = TrainedModel::untrained(Network::from_params(desc.spec, params)?);
    model.selected_epoch = desc.selected_epoch;
    Ok(model)
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "epoch,train_loss,train_acc,val_acc,val_loss")?;
    for r in history {
        writeln!(w, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_acc, r.val_loss)?;
    }
    Ok(())
}
