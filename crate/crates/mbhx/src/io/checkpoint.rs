//! `.ckpt` checkpoint container.
//!
//! Layout: magic `MBHX`, version (u32 LE), header length (u32 LE), header
//! JSON `{model_config, train_config, epoch, params: [{name, shape}]}`,
//! then one `.tsr`-format block per parameter in header order, and a
//! trailing CRC32 (IEEE) of every preceding byte (u32 LE).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::tensor_file::{decode_tensor, encode_tensor, Dtype};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MBHX";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: Value,
    train_config: Value,
    epoch: u32,
    params: Vec<ParamInfo>,
}

#[derive(Serialize, Deserialize)]
struct ParamInfo {
    name: String,
    shape: Vec<usize>,
}

/// A checkpoint read back from disk.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub model_config: Value,
    pub train_config: Value,
    pub epoch: u32,
    pub params: Vec<(String, Tensor)>,
}

pub fn save_checkpoint(
    path: &Path,
    params: &[(String, Tensor)],
    model_config: &Value,
    train_config: &Value,
    epoch: u32,
) -> Result<()> {
    let header = Header {
        model_config: model_config.clone(),
        train_config: train_config.clone(),
        epoch,
        params: params
            .iter()
            .map(|(name, t)| ParamInfo {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, tensor) in params {
        bytes.extend_from_slice(&encode_tensor(tensor, Dtype::F64));
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&bytes);
    bytes.extend_from_slice(&hasher.finalize().to_le_bytes());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Format("checkpoint too short".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad checkpoint magic (expected MBHX)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }

    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    let actual_crc = hasher.finalize();
    if actual_crc != stored_crc {
        return Err(Error::Corrupted(format!(
            "checkpoint CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }

    let header_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if body.len() < header_end {
        return Err(Error::Format("checkpoint header truncated".into()));
    }
    let header: Header = serde_json::from_slice(&body[12..header_end])?;

    let mut params = Vec::with_capacity(header.params.len());
    let mut off = header_end;
    for info in &header.params {
        let (tensor, consumed) = decode_tensor(&body[off..])?;
        if tensor.shape() != info.shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter {} shape {:?} does not match header {:?}",
                info.name,
                tensor.shape(),
                info.shape
            )));
        }
        params.push((info.name.clone(), tensor));
        off += consumed;
    }
    if off != body.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last parameter",
            body.len() - off
        )));
    }

    Ok(LoadedCheckpoint {
        model_config: header.model_config,
        train_config: header.train_config,
        epoch: header.epoch,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample_params() -> Vec<(String, Tensor)> {
        vec![
            (
                "enc.kernel".to_string(),
                Tensor::new(&[2, 1, 3, 3], (0..18).map(|i| i as f64 * 0.01).collect()).unwrap(),
            ),
            ("enc.bias".to_string(), Tensor::zeros(&[2])),
        ]
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let params = sample_params();
        let mc = json!({"base_channels": 16});
        let tc = json!({"learning_rate": 3.5e-3});
        save_checkpoint(&p1, &params, &mc, &tc, 7).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.model_config, mc);
        save_checkpoint(&p2, &loaded.params, &loaded.model_config, &loaded.train_config, loaded.epoch)
            .unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn flipping_one_payload_byte_is_a_crc_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&path, &sample_params(), &json!(null), &json!(null), 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let idx = bytes.len() / 2;
        bytes[idx] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupted(_))));
    }

    #[test]
    fn version_mismatch_is_an_upgrade_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ckpt");
        save_checkpoint(&path, &sample_params(), &json!(null), &json!(null), 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        // keep the CRC consistent so the version check is what trips
        let body_len = bytes.len() - 4;
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&bytes[..body_len]);
        let crc = hasher.finalize();
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::UnsupportedVersion { found: 99, .. })
        ));
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"MBT1 this is a tensor, not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
