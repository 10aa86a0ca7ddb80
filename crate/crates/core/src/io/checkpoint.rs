//! Checkpoints are JSON documents holding the model configuration and
//! every parameter tensor by name. Tensor data is stored as base64 of the
//! little-endian IEEE-754 bytes, so save then load is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::records::write_atomic;
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    config: ModelConfig,
    params: Vec<StoredTensor>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(name: &str, text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "{name}: {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn checkpoint_to_string(model: &Model) -> Result<String> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        params: model
            .params
            .iter()
            .map(|(name, t)| StoredTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: encode(t.data()),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&ckpt)? + "\n")
}

/// Rebuilds the model from the stored configuration and then overwrites
/// every parameter; names and shapes must match exactly.
pub fn checkpoint_from_str(text: &str) -> Result<Model> {
    let ckpt: Checkpoint =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    let mut model = Model::new(ckpt.config)?;
    if ckpt.params.len() != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "{} stored tensors but the configuration defines {}",
            ckpt.params.len(),
            model.params.len()
        )));
    }
    for stored in ckpt.params {
        let id = model
            .params
            .find(&stored.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", stored.name)))?;
        let expected = model.params.get(id).shape().to_vec();
        if stored.shape != expected {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?}, expected {expected:?}",
                stored.name, stored.shape
            )));
        }
        let data = decode(&stored.name, &stored.data)?;
        let tensor = Tensor::new(stored.shape, data)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", stored.name)))?;
        if !tensor.is_finite() {
            return Err(Error::Checkpoint(format!("{}: non-finite values", stored.name)));
        }
        *model.params.get_mut(id) = tensor;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, checkpoint_to_string(model)?.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
