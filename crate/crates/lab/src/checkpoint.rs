//! Model checkpoint file.
//!
//! Layout:
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 8                | magic `HWYCKPT\0`                         |
//! | 4                | header length `n`, little-endian `u32`    |
//! | n                | UTF-8 JSON [`CheckpointHeader`]           |
//! | rest             | parameter blocks, little-endian `f32`     |
//!
//! Blocks follow [`BLOCK_NAMES`] order; each header entry records its shape
//! and byte offset into the payload. The payload SHA-256 is stored in the
//! header and verified on load.

use std::path::Path;

use headway_core::convlstm::{ModelDims, ModelParams, BLOCK_NAMES};
use headway_core::grid::{GridSpec, Scaler};
use headway_core::predict::TrainedModel;
use headway_core::train::TrainHistory;
use headway_core::window::WindowSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::write_atomic;

pub const MAGIC: &[u8; 8] = b"HWYCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dims: ModelDims,
    pub scaler: Scaler,
    pub window: WindowSpec,
    pub grid: GridSpec,
    pub seed: u64,
    /// Epoch whose parameters are stored.
    pub epoch: usize,
    pub history: TrainHistory,
    pub validation_replications: Vec<u32>,
    pub blocks: Vec<BlockEntry>,
    pub payload_bytes: u64,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub grid: GridSpec,
    pub seed: u64,
    pub history: TrainHistory,
    pub validation_replications: Vec<u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated: {0}")]
    Truncated(&'static str),
    #[error("checkpoint header is not valid JSON: {0}")]
    Header(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}, expected {FORMAT_VERSION}")]
    Version(u32),
    #[error("payload digest mismatch: header {expected}, file {found}")]
    Digest { expected: String, found: String },
    #[error("header declares {declared} payload bytes, file holds {actual}")]
    PayloadSize { declared: u64, actual: u64 },
    #[error("block {name}: {reason}")]
    Block { name: String, reason: String },
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn payload_digest(payload: &[u8]) -> String {
    hex(&Sha256::digest(payload))
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let mut payload = Vec::with_capacity(ck.model.params.n_params() * 4);
    let mut blocks = Vec::new();
    for (name, t) in ck.model.params.blocks() {
        blocks.push(BlockEntry { name: name.to_string(), shape: t.shape().to_vec(), offset: payload.len() as u64 });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        dims: ck.model.params.dims.clone(),
        scaler: ck.model.scaler,
        window: ck.model.window.clone(),
        grid: ck.grid.clone(),
        seed: ck.seed,
        epoch: ck.history.best_epoch,
        history: ck.history.clone(),
        validation_replications: ck.validation_replications.clone(),
        blocks,
        payload_bytes: payload.len() as u64,
        payload_sha256: payload_digest(&payload),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Checkpoint), CheckpointError> {
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated("preamble"));
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(12..12 + n).ok_or(CheckpointError::Truncated("header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version(header.format_version));
    }
    let payload = &bytes[12 + n..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(if (payload.len() as u64) < header.payload_bytes {
            CheckpointError::Truncated("payload")
        } else {
            CheckpointError::PayloadSize { declared: header.payload_bytes, actual: payload.len() as u64 }
        });
    }
    let found = payload_digest(payload);
    if found != header.payload_sha256 {
        return Err(CheckpointError::Digest { expected: header.payload_sha256.clone(), found });
    }
    header.dims.validate().map_err(|e| CheckpointError::Block { name: "dims".into(), reason: e.to_string() })?;
    let mut params = ModelParams::<f32>::zeros(&header.dims);
    if header.blocks.len() != BLOCK_NAMES.len() {
        return Err(CheckpointError::Block {
            name: "*".into(),
            reason: format!("{} blocks declared, {} expected", header.blocks.len(), BLOCK_NAMES.len()),
        });
    }
    for ((name, t), entry) in params.blocks_mut().into_iter().zip(&header.blocks) {
        let bad = |reason: String| CheckpointError::Block { name: entry.name.clone(), reason };
        if entry.name != name {
            return Err(bad(format!("expected block {name}")));
        }
        if entry.shape != t.shape() {
            return Err(bad(format!("declared shape {:?} does not match dims ({:?})", entry.shape, t.shape())));
        }
        let start = entry.offset as usize;
        let end = start + 4 * t.len();
        let raw = payload.get(start..end).ok_or_else(|| bad(format!("bytes {start}..{end} outside payload")))?;
        for (v, b) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    let expected_bytes = 4 * params.n_params() as u64;
    if expected_bytes != header.payload_bytes {
        return Err(CheckpointError::PayloadSize { declared: header.payload_bytes, actual: expected_bytes });
    }
    let ck = Checkpoint {
        model: TrainedModel {
            params,
            scaler: header.scaler,
            window: header.window.clone(),
            delta_t_s: header.grid.delta_t_s,
        },
        grid: header.grid.clone(),
        seed: header.seed,
        history: header.history.clone(),
        validation_replications: header.validation_replications.clone(),
    };
    Ok((header, ck))
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> anyhow::Result<()> {
    write_atomic(path, &encode(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Checkpoint), CheckpointError> {
    decode(&std::fs::read(path)?)
}
