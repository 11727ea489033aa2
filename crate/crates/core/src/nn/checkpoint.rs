//! Binary checkpoint format.
//!
//! ```text
//! "OCCN" | version: u32 LE | header_len: u32 LE | header (UTF-8 JSON)
//! tensor_count: u32 | per tensor: name_len u32, name, ndim u32, dims u32...
//! payloads: per tensor, little-endian f32 values in row-major order
//! ```
//!
//! The header carries the model config, hash constants, the label list with
//! its digest, training metadata, and a SHA-256 over everything after it.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HashSpec, Model, ModelConfig, ModelError, Parameters};
use crate::hisco::{HiscoCode, LabelSpace};

pub const MAGIC: &[u8; 4] = b"OCCN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_seen: usize,
    pub seed: u64,
}

/// A trained model together with the label space it predicts over.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub labels: LabelSpace,
    pub label_space_digest: String,
    pub best_val_accuracy: f64,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, labels: LabelSpace, best_val_accuracy: f64, meta: TrainingMeta) -> Self {
        let label_space_digest = labels.digest();
        Self { model, labels, label_space_digest, best_val_accuracy, meta }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    hash: HashSpec,
    labels: Vec<HiscoCode>,
    label_space_digest: String,
    best_val_accuracy: Option<f64>,
    meta: TrainingMeta,
    payload_sha256: String,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(msg.into())
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>, ModelError> {
    let tensors = ckpt.model.params.tensors();
    let mut body = Vec::new();
    body.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, _) in &tensors {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, _, data) in &tensors {
        for v in data.iter() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        config: ckpt.model.config.clone(),
        hash: ckpt.model.hash.clone(),
        labels: ckpt.labels.codes().to_vec(),
        label_space_digest: ckpt.label_space_digest.clone(),
        best_val_accuracy: ckpt.best_val_accuracy.is_finite().then_some(ckpt.best_val_accuracy),
        meta: ckpt.meta.clone(),
        payload_sha256: hex::encode(Sha256::digest(&body)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint, ModelError> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version} (this build reads version {CHECKPOINT_VERSION})")));
    }
    let hlen = cur.u32()? as usize;
    let header: Header = serde_json::from_slice(cur.take(hlen)?).map_err(|e| corrupt(format!("header: {e}")))?;
    let body = &buf[cur.pos..];
    if hex::encode(Sha256::digest(body)) != header.payload_sha256 {
        return Err(corrupt("payload digest mismatch"));
    }
    header.config.validate().map_err(|e| corrupt(e.to_string()))?;
    if header.hash != HashSpec::standard(header.config.num_hashes) {
        return Err(corrupt("hash constants differ from this build"));
    }
    let labels = LabelSpace::new(header.labels).map_err(|e| corrupt(e.to_string()))?;
    if labels.digest() != header.label_space_digest {
        return Err(corrupt("label space digest mismatch"));
    }
    if labels.len() != header.config.label_count {
        return Err(corrupt("label count does not match config"));
    }

    let mut params = Parameters::<f32>::zeros(&header.config);
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    let count = cur.u32()? as usize;
    if count != expected.len() {
        return Err(corrupt(format!("{count} tensors, expected {}", expected.len())));
    }
    for (name, shape) in &expected {
        let nlen = cur.u32()? as usize;
        let got = std::str::from_utf8(cur.take(nlen)?).map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let ndim = cur.u32()? as usize;
        let dims = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if got != name || &dims != shape {
            return Err(corrupt(format!("tensor {got} {dims:?}, expected {name} {shape:?}")));
        }
    }
    for dst in params.tensors_mut() {
        for v in dst.iter_mut() {
            *v = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        }
    }
    if cur.pos != buf.len() {
        return Err(corrupt("trailing bytes after payload"));
    }
    if !params.all_finite() {
        return Err(corrupt("non-finite parameter values"));
    }
    let model = Model { config: header.config, hash: header.hash, params };
    Ok(Checkpoint {
        model,
        labels,
        label_space_digest: header.label_space_digest,
        best_val_accuracy: header.best_val_accuracy.unwrap_or(f64::NEG_INFINITY),
        meta: header.meta,
    })
}

/// Writes atomically through a temporary sibling file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let bytes = to_bytes(ckpt)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    from_bytes(&std::fs::read(path)?)
}
