//! Binary checkpoint: `QGBM`, u32 version, u64 header length, a JSON header,
//! then every weight as little-endian f64 in layout order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::GrayboxModel;
use crate::dynamics::{config_hash, SystemConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"QGBM";
const MAX_HEADER: u64 = 1 << 26;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    hidden: usize,
    weights: usize,
    config_hash: String,
    config: SystemConfig,
    blocks: Vec<BlockInfo>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Writes `model` with caller metadata (hyperparameters, dataset hash) under
/// `extra`.
pub fn write_checkpoint<W: Write>(model: &GrayboxModel, extra: serde_json::Value, mut w: W) -> Result<()> {
    let header = Header {
        hidden: model.hidden(),
        weights: model.num_weights(),
        config_hash: config_hash(model.config()),
        config: model.config().clone(),
        blocks: model
            .weight_blocks()
            .into_iter()
            .map(|(name, _, len)| BlockInfo { name, len })
            .collect(),
        extra,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(8 * model.num_weights());
    for v in model.weights() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint back, returning the model and the `extra` metadata.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(GrayboxModel, serde_json::Value)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version} is not supported")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > MAX_HEADER {
        return Err(Error::Format(format!("checkpoint header of {len} bytes")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if config_hash(&header.config) != header.config_hash {
        return Err(Error::Format("checkpoint config hash does not match its config".into()));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != 8 * header.weights {
        return Err(Error::Format(format!(
            "checkpoint payload has {} bytes, expected {}",
            payload.len(),
            8 * header.weights
        )));
    }
    let weights: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = GrayboxModel::with_weights(&header.config, header.hidden, weights)?;
    let expected: Vec<(String, usize)> = model
        .weight_blocks()
        .into_iter()
        .map(|(n, _, l)| (n, l))
        .collect();
    let found: Vec<(String, usize)> = header.blocks.into_iter().map(|b| (b.name, b.len)).collect();
    if expected != found {
        return Err(Error::Format("checkpoint block layout does not match the model".into()));
    }
    Ok((model, header.extra))
}
