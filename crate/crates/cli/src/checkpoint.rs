//! Checkpoint files: a JSON manifest describing every tensor, a raw
//! little-endian float32 payload in manifest order, and a payload checksum.
//!
//! Layout: 8-byte magic, little-endian u64 manifest length, manifest JSON,
//! payload, 32-byte SHA-256 of the payload. Saving the same model twice
//! yields identical bytes, so determinism checks can compare files directly.

use std::path::Path;

use jaffnet_core::model::JaffNet;
use jaffnet_core::optim::Adam;
use jaffnet_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"JAFFNET1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    config: Vec<(String, String)>,
    tensors: Vec<TensorEntry>,
    buffers: Vec<BufferDesc>,
    meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct BufferDesc {
    name: String,
    channels: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainingMeta {
    step: u64,
    has_optimizer: bool,
}

/// A parsed checkpoint, ready to apply to a model built from its config.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub config: RunConfig,
    pub config_hash: String,
    pub step: u64,
    params: Vec<(String, Tensor<f32>)>,
    buffers: Vec<(String, Vec<f32>, Vec<f32>)>,
    moments: Option<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)>,
}

fn push_f32s(payload: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the model, its batch-norm buffers and (optionally) the Adam
/// moments into a single checkpoint file.
pub fn save(
    path: &Path,
    config: &RunConfig,
    model: &JaffNet<f32>,
    optimizer: Option<&Adam<f32>>,
    step: u64,
) -> Result<()> {
    let tensors: Vec<TensorEntry> = model
        .params
        .params()
        .iter()
        .map(|p| TensorEntry { name: p.name.clone(), shape: p.tensor.shape(), dtype: "f32".into() })
        .collect();
    let buffers: Vec<BufferDesc> = model
        .params
        .buffers()
        .iter()
        .map(|b| BufferDesc { name: b.name.clone(), channels: b.mean.len() })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: config.hash(),
        config: config.to_pairs(),
        tensors,
        buffers,
        meta: TrainingMeta { step, has_optimizer: optimizer.is_some() },
    };

    let mut payload = Vec::new();
    for p in model.params.params() {
        push_f32s(&mut payload, p.tensor.data());
    }
    for b in model.params.buffers() {
        push_f32s(&mut payload, &b.mean);
        push_f32s(&mut payload, &b.var);
    }
    if let Some(adam) = optimizer {
        let (m, v) = adam.moments();
        for t in m {
            push_f32s(&mut payload, t.data());
        }
        for t in v {
            push_f32s(&mut payload, t.data());
        }
    }

    let manifest_json = serde_json::to_vec(&manifest)
        .map_err(|e| CliError::Checkpoint(format!("cannot encode manifest: {e}")))?;
    let mut out = Vec::with_capacity(8 + 8 + manifest_json.len() + payload.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    std::fs::write(path, &out)
        .map_err(|e| CliError::Checkpoint(format!("cannot write {}: {e}", path.display())))
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> PayloadReader<'a> {
    /// Reads `count` floats for the named region, reporting the region name
    /// when the payload runs short.
    fn take(&mut self, name: &str, count: usize) -> Result<Vec<f32>> {
        let need = count * 4;
        if self.offset + need > self.bytes.len() {
            return Err(CliError::Checkpoint(format!(
                "payload truncated inside tensor {name}: need {} bytes at offset {}, have {}",
                need,
                self.offset,
                self.bytes.len()
            )));
        }
        let chunk = &self.bytes[self.offset..self.offset + need];
        self.offset += need;
        Ok(chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }
}

/// Reads and verifies a checkpoint file.
pub fn load(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(CliError::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest_end = 16usize.checked_add(manifest_len).filter(|&e| e <= bytes.len()).ok_or_else(
        || CliError::Checkpoint(format!("{}: manifest length exceeds file size", path.display())),
    )?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..manifest_end])
        .map_err(|e| CliError::Checkpoint(format!("corrupt manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CliError::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    for t in &manifest.tensors {
        if t.dtype != "f32" {
            return Err(CliError::Checkpoint(format!(
                "tensor {} has unsupported element type {}",
                t.name, t.dtype
            )));
        }
    }

    let tail = bytes.len().saturating_sub(32);
    let payload = &bytes[manifest_end..tail.max(manifest_end)];
    let mut reader = PayloadReader { bytes: payload, offset: 0 };

    let mut params = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let count = t.shape.iter().product();
        let data = reader.take(&t.name, count)?;
        let tensor = Tensor::from_vec(t.shape, data)
            .map_err(|e| CliError::Checkpoint(format!("tensor {}: {e}", t.name)))?;
        params.push((t.name.clone(), tensor));
    }
    let mut buffers = Vec::with_capacity(manifest.buffers.len());
    for b in &manifest.buffers {
        let mean = reader.take(&b.name, b.channels)?;
        let var = reader.take(&b.name, b.channels)?;
        buffers.push((b.name.clone(), mean, var));
    }
    let moments = if manifest.meta.has_optimizer {
        let mut first = Vec::with_capacity(manifest.tensors.len());
        let mut second = Vec::with_capacity(manifest.tensors.len());
        for t in &manifest.tensors {
            let count = t.shape.iter().product();
            let data = reader.take(&format!("{}.adam_m", t.name), count)?;
            first.push(Tensor::from_vec(t.shape, data).expect("shape already validated"));
        }
        for t in &manifest.tensors {
            let count = t.shape.iter().product();
            let data = reader.take(&format!("{}.adam_v", t.name), count)?;
            second.push(Tensor::from_vec(t.shape, data).expect("shape already validated"));
        }
        Some((first, second))
    } else {
        None
    };
    if reader.offset != payload.len() {
        return Err(CliError::Checkpoint(format!(
            "payload has {} trailing bytes",
            payload.len() - reader.offset
        )));
    }

    let checksum = &bytes[tail.max(manifest_end)..];
    let expected = Sha256::digest(payload);
    if checksum != expected.as_slice() {
        return Err(CliError::Checkpoint("payload checksum mismatch".into()));
    }

    let config = RunConfig::from_pairs(&manifest.config)
        .map_err(|e| CliError::Checkpoint(format!("manifest config: {e}")))?;
    Ok(LoadedCheckpoint {
        config,
        config_hash: manifest.config_hash,
        step: manifest.meta.step,
        params,
        buffers,
        moments,
    })
}

/// Copies checkpoint parameters and buffers into a model. Every tensor is
/// matched by position and must agree in name and shape.
pub fn apply(model: &mut JaffNet<f32>, loaded: &LoadedCheckpoint) -> Result<()> {
    let model_params = model.params.params_mut();
    if model_params.len() != loaded.params.len() {
        return Err(CliError::Checkpoint(format!(
            "checkpoint holds {} tensors, the model has {}",
            loaded.params.len(),
            model_params.len()
        )));
    }
    for (entry, (name, tensor)) in model_params.iter_mut().zip(&loaded.params) {
        if &entry.name != name {
            return Err(CliError::Checkpoint(format!(
                "tensor order mismatch: checkpoint has {name}, model expects {}",
                entry.name
            )));
        }
        if entry.tensor.shape() != tensor.shape() {
            return Err(CliError::Checkpoint(format!(
                "shape mismatch for tensor {name}: checkpoint {:?}, model {:?}",
                tensor.shape(),
                entry.tensor.shape()
            )));
        }
        entry.tensor = tensor.clone();
    }
    let model_buffers = model.params.buffers_mut();
    if model_buffers.len() != loaded.buffers.len() {
        return Err(CliError::Checkpoint(format!(
            "checkpoint holds {} buffers, the model has {}",
            loaded.buffers.len(),
            model_buffers.len()
        )));
    }
    for (entry, (name, mean, var)) in model_buffers.iter_mut().zip(&loaded.buffers) {
        if &entry.name != name || entry.mean.len() != mean.len() {
            return Err(CliError::Checkpoint(format!(
                "buffer mismatch: checkpoint has {name} ({} channels), model expects {} ({} channels)",
                mean.len(),
                entry.name,
                entry.mean.len()
            )));
        }
        entry.mean = mean.clone();
        entry.var = var.clone();
    }
    Ok(())
}

/// Restores Adam moments saved alongside the parameters.
pub fn restore_optimizer(adam: &mut Adam<f32>, loaded: &LoadedCheckpoint) -> Result<()> {
    match &loaded.moments {
        None => Err(CliError::Checkpoint("checkpoint carries no optimizer state".into())),
        Some((m, v)) => adam
            .load_state(loaded.step, m.clone(), v.clone())
            .map_err(|e| CliError::Checkpoint(e.to_string())),
    }
}
