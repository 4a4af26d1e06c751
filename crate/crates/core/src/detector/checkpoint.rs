//! Checkpoint file: magic `IDCK`, u32 version, u32 header length, JSON
//! header (config + metadata), then every parameter tensor as f64 LE in
//! canonical order, then a CRC-32 over everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetectorConfig, DetectorModel, DetectorParams};
use crate::error::{Error, Result};
use crate::seqfeat::EmbeddingType;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"IDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub embedding_type: EmbeddingType,
    /// Dimension `d` of the identity vectors the model was trained on.
    pub identity_dim: usize,
    pub backend_id: String,
    /// Window length ℓ used in training; evaluation defaults to it.
    pub sequence_length: usize,
    pub epoch: usize,
    pub val_auc: Option<f64>,
    #[serde(default)]
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DetectorModel,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: DetectorConfig,
    meta: CheckpointMeta,
    tensor_lengths: Vec<usize>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = ckpt.model.params.tensors();
    let header = serde_json::to_vec(&Header {
        config: ckpt.model.config,
        meta: ckpt.meta.clone(),
        tensor_lengths: tensors.iter().map(|t| t.len()).collect(),
    })?;
    let n: usize = tensors.iter().map(|t| t.len()).sum();
    let mut buf = Vec::with_capacity(16 + header.len() + 8 * n);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for t in tensors {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let truncated = || Error::Format("truncated checkpoint".into());
    if buf.len() < 16 {
        return Err(truncated());
    }
    if buf[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let header_len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(truncated)?;
    let header: Header = serde_json::from_slice(&body[12..header_end])?;
    let mut params = DetectorParams::zeros(&header.config);
    let expected: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    if expected != header.tensor_lengths {
        return Err(Error::Shape("checkpoint tensors do not match its config".into()));
    }
    let payload = &body[header_end..];
    if payload.len() != 8 * expected.iter().sum::<usize>() {
        return Err(Error::Format("checkpoint payload size mismatch".into()));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in params.tensors_mut() {
        for (dst, v) in t.iter_mut().zip(&mut values) {
            *dst = v;
        }
    }
    Ok(Checkpoint {
        model: DetectorModel::from_params(header.config, params)?,
        meta: header.meta,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(ckpt)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::input(path, e.to_string()))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = DetectorConfig {
            input_dim: 6,
            hidden_size: 5,
            head_hidden: 4,
            ..Default::default()
        };
        Checkpoint {
            model: DetectorModel::new(config, 11).unwrap(),
            meta: CheckpointMeta {
                embedding_type: EmbeddingType::Tmp,
                identity_dim: 6,
                backend_id: "synthetic".into(),
                sequence_length: 5,
                epoch: 3,
                val_auc: Some(0.75),
                val_loss: Some(0.4),
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        let n = bytes.len();
        bytes[n - 9] ^= 0x10;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Checksum { .. })));
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Version { found: 9, .. })));
        assert!(decode_checkpoint(b"IDCK").is_err());
    }
}
