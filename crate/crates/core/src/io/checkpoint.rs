//! Checkpoints: `"UFCK1"`, a little-endian u64 manifest length, a JSON
//! manifest, then every tensor as little-endian f64 in manifest order.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::decoders::{DecoderConfig, SegModel};
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::nn::Params;
use crate::pretrain::{PretrainConfig, PretrainModel};
use crate::runtime::TrainConfig;
use crate::swin::EncoderConfig;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"UFCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Segmentation,
    Pretrain,
}

/// Position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u64,
}

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        RngState {
            seed,
            stream: 0,
            word_pos: 0,
        }
    }
}

/// Everything in the manifest except the tensor table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub kind: CheckpointKind,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub decoder: Option<DecoderConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
    pub step: u64,
    pub rng: RngState,
}

impl CheckpointMeta {
    pub fn segmentation(model: &SegModel, step: u64, seed: u64) -> Self {
        CheckpointMeta {
            version: CHECKPOINT_VERSION,
            kind: CheckpointKind::Segmentation,
            encoder: model.encoder_config.clone(),
            decoder: Some(model.decoder_config.clone()),
            train: None,
            pretrain: None,
            step,
            rng: RngState::from_seed(seed),
        }
    }

    pub fn pretrain(model: &PretrainModel, step: u64, seed: u64) -> Self {
        CheckpointMeta {
            version: CHECKPOINT_VERSION,
            kind: CheckpointKind::Pretrain,
            encoder: model.encoder_config.clone(),
            decoder: None,
            train: None,
            pretrain: None,
            step,
            rng: RngState::from_seed(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    /// Number of f64 values.
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: IndexMap<String, StoredTensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Names and shapes must match exactly.
    Strict,
    /// Copy every tensor whose name and shape match; report the rest.
    Transfer,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TransferReport {
    /// Copied into the model.
    pub matched: Vec<String>,
    /// In the model but not in the checkpoint; left as initialized.
    pub missing: Vec<String>,
    /// In the checkpoint but not in the model.
    pub unexpected: Vec<String>,
    pub shape_mismatches: Vec<String>,
}

pub fn encode_checkpoint(params: &Params, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let named = params.named();
    let mut tensors = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, t) in &named {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel() as u64,
        });
        offset += 8 * t.numel() as u64;
    }
    let manifest = serde_json::to_vec(&Manifest {
        meta: meta.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(13 + manifest.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in &named {
        for v in t.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 13 {
        return Err(err(bytes.len(), format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(err(0, "bad checkpoint magic".into()));
    }
    let mlen = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let payload_at = 13usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err(5, format!("manifest length {mlen} exceeds file size {}", bytes.len())))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[13..payload_at]).map_err(|e| err(13, format!("manifest: {e}")))?;
    if manifest.meta.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {CHECKPOINT_VERSION})",
            manifest.meta.version
        )));
    }
    let payload = &bytes[payload_at..];
    let mut tensors = IndexMap::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let numel: usize = e.shape.iter().product();
        if e.len as usize != numel {
            return Err(Error::Checkpoint(format!(
                "{}: stored length {} does not match shape {:?}",
                e.name, e.len, e.shape
            )));
        }
        let start = e.offset as usize;
        let end = start + 8 * numel;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "{}: needs payload bytes {start}..{end} but only {} are present",
                e.name,
                payload.len()
            )));
        }
        let values = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if tensors
            .insert(e.name.clone(), StoredTensor { shape: e.shape, values })
            .is_some()
        {
            return Err(Error::Checkpoint(format!("{}: stored twice", e.name)));
        }
    }
    Ok(Checkpoint {
        meta: manifest.meta,
        tensors,
    })
}

pub fn save_checkpoint(path: &Path, params: &Params, meta: &CheckpointMeta) -> Result<()> {
    atomic_write(path, &encode_checkpoint(params, meta)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes, path)
}

impl Checkpoint {
    /// Copies stored tensors into `params`. Strict mode fails (without
    /// touching `params`) on any difference in names or shapes.
    pub fn apply(&self, params: &Params, mode: LoadMode) -> Result<TransferReport> {
        let named = params.named();
        let mut report = TransferReport::default();
        for (name, t) in &named {
            match self.tensors.get(name) {
                None => report.missing.push(name.clone()),
                Some(s) if s.shape != t.shape() => {
                    report
                        .shape_mismatches
                        .push(format!("{name}: checkpoint {:?} vs model {:?}", s.shape, t.shape()))
                }
                Some(_) => report.matched.push(name.clone()),
            }
        }
        report.unexpected = self
            .tensors
            .keys()
            .filter(|k| params.get(k).is_none())
            .cloned()
            .collect();
        if mode == LoadMode::Strict
            && !(report.missing.is_empty() && report.unexpected.is_empty() && report.shape_mismatches.is_empty())
        {
            let first = report
                .shape_mismatches
                .first()
                .map(|s| format!("shape mismatch {s}"))
                .or_else(|| report.missing.first().map(|s| format!("missing parameter {s}")))
                .or_else(|| report.unexpected.first().map(|s| format!("unexpected parameter {s}")))
                .unwrap_or_default();
            return Err(Error::Checkpoint(format!(
                "strict load failed ({} missing, {} unexpected, {} shape mismatches): {first}",
                report.missing.len(),
                report.unexpected.len(),
                report.shape_mismatches.len()
            )));
        }
        for name in &report.matched {
            params
                .get(name)
                .expect("listed above")
                .assign(&self.tensors[name].values)?;
        }
        Ok(report)
    }
}
