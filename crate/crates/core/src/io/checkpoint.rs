//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (model spec, preprocessing, training config, final metrics, block
//! names and shapes), every block as little-endian `f64`s in header order,
//! and finally a SHA-256 digest of all preceding bytes.

use std::collections::BTreeMap;
use std::path::Path;

use actisleep_nn::ParamBlock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::atomic::write_bytes;
use crate::models::data::SplitConfig;
use crate::models::features::FEATURE_CATALOG_VERSION;
use crate::models::{DataConfig, Model, ModelKind, ModelSpec, TrainConfig};

pub const MAGIC: &[u8; 8] = b"ACTICKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub data: DataConfig,
    pub train: Option<TrainConfig>,
    /// Window split used for training, so evaluation can recover the
    /// held-out windows.
    #[serde(default)]
    pub split: Option<SplitConfig>,
    pub metrics: BTreeMap<String, f64>,
    pub feature_catalog_version: u32,
}

impl CheckpointMeta {
    pub fn new(spec: ModelSpec, data: DataConfig) -> Self {
        Self {
            spec,
            data,
            train: None,
            split: None,
            metrics: BTreeMap::new(),
            feature_catalog_version: FEATURE_CATALOG_VERSION,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: CheckpointMeta,
    blocks: Vec<BlockHeader>,
}

pub fn encode_checkpoint(meta: &CheckpointMeta, blocks: &[ParamBlock]) -> Result<Vec<u8>> {
    for b in blocks {
        if b.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("block `{}` holds non-finite values", b.name)));
        }
        if b.shape.iter().product::<usize>() != b.values.len() {
            return Err(Error::Checkpoint(format!("block `{}` shape does not match its values", b.name)));
        }
    }
    if meta.metrics.values().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint("metrics must be finite".into()));
    }
    let header = Header {
        meta: meta.clone(),
        blocks: blocks
            .iter()
            .map(|b| BlockHeader {
                name: b.name.clone(),
                shape: b.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for b in blocks {
        for v in &b.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointMeta, Vec<ParamBlock>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch; the file is corrupted"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("header length exceeds file"))?;
    let header: Header =
        serde_json::from_slice(&body[20..header_end]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let mut pos = header_end;
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for h in header.blocks {
        let n: usize = h.shape.iter().product();
        let end = pos + 8 * n;
        if end > body.len() {
            return Err(Error::Checkpoint(format!("block `{}` is truncated", h.name)));
        }
        let values = body[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        pos = end;
        blocks.push(ParamBlock {
            name: h.name,
            shape: h.shape,
            values,
        });
    }
    if pos != body.len() {
        return Err(bad("unexpected trailing bytes"));
    }
    Ok((header.meta, blocks))
}

pub fn save_checkpoint(model: &Model, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if meta.spec != model.spec || meta.data != model.data {
        return Err(Error::Checkpoint("metadata does not describe this model".into()));
    }
    let bytes = encode_checkpoint(meta, &model.graph.named_blocks())?;
    write_bytes(path, &bytes)
}

/// Restores a model, checking that it is of the `expected` kind when given.
pub fn load_checkpoint_bytes(bytes: &[u8], expected: Option<ModelKind>) -> Result<(Model, CheckpointMeta)> {
    let (meta, blocks) = decode_checkpoint(bytes)?;
    if let Some(kind) = expected {
        if meta.spec.kind() != kind {
            return Err(Error::SpecMismatch {
                expected: kind.to_string(),
                found: meta.spec.kind().to_string(),
            });
        }
    }
    if meta.feature_catalog_version != FEATURE_CATALOG_VERSION {
        return Err(Error::Checkpoint(format!(
            "feature catalog version {} is not supported",
            meta.feature_catalog_version
        )));
    }
    let mut graph = meta.spec.build()?;
    graph.load_blocks(&blocks)?;
    Ok((Model::from_trained(meta.spec.clone(), meta.data, graph), meta))
}

pub fn load_checkpoint(path: &Path, expected: Option<ModelKind>) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint_bytes(&bytes, expected)
}
