//! Checkpoints: `I2MVCKPT`, u32 version, u32 index length, JSON index
//! `{config, dtype, tensors: {name: {shape, offset}}}`, then the raw
//! little-endian value blob. Offsets are in bytes from the start of the blob.

use std::collections::BTreeMap;
use std::path::Path;

use i2mv_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"I2MVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const VALUE_BYTES: usize = 8;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    config: ModelConfig,
    dtype: String,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Parameters in blob order.
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode_checkpoint(config: &ModelConfig, params: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut tensors = BTreeMap::new();
    let mut offset = 0;
    for (name, t) in params {
        let entry = TensorEntry {
            shape: t.shape().to_vec(),
            offset,
        };
        if tensors.insert(name.clone(), entry).is_some() {
            return Err(Error::Duplicate {
                kind: "parameter",
                name: name.clone(),
            });
        }
        offset += t.numel() * VALUE_BYTES;
    }
    let index = serde_json::to_vec(&Index {
        config: config.clone(),
        dtype: "f64".into(),
        tensors,
    })
    .expect("index serializes");

    let mut out = Vec::with_capacity(16 + index.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.len() as u32).to_le_bytes());
    out.extend_from_slice(&index);
    for (_, t) in params {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], origin: &str) -> Result<Checkpoint> {
    if bytes.len() < 16 {
        return Err(Error::format(origin, format!("byte {}", bytes.len()), "truncated header"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, "byte 0", "bad magic, expected I2MVCKPT"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(origin, "byte 8", format!("unsupported version {version}")));
    }
    let index_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let blob_start = 16usize
        .checked_add(index_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(origin, "byte 12", "index extends past end of file"))?;
    let index: Index = serde_json::from_slice(&bytes[16..blob_start])
        .map_err(|e| Error::format(origin, "byte 16", format!("bad index: {e}")))?;
    if index.dtype != "f64" {
        return Err(Error::format(origin, "byte 16", format!("unsupported dtype {}", index.dtype)));
    }
    let blob = &bytes[blob_start..];

    let mut entries: Vec<(String, TensorEntry)> = index.tensors.into_iter().collect();
    entries.sort_by_key(|(_, e)| e.offset);
    let mut cursor = 0;
    let mut tensors = Vec::with_capacity(entries.len());
    for (name, entry) in entries {
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(VALUE_BYTES))
            .ok_or_else(|| Error::format(origin, "index", format!("tensor `{name}` too large")))?;
        if entry.offset != cursor || cursor + count > blob.len() {
            return Err(Error::format(
                origin,
                format!("byte {}", blob_start + entry.offset),
                format!("tensor `{name}` does not match the blob layout"),
            ));
        }
        let data = blob[cursor..cursor + count]
            .chunks_exact(VALUE_BYTES)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&entry.shape, data)
            .map_err(|e| Error::format(origin, "index", format!("tensor `{name}`: {e}")))?;
        tensors.push((name, t));
        cursor += count;
    }
    if cursor != blob.len() {
        return Err(Error::format(
            origin,
            format!("byte {}", blob_start + cursor),
            format!("blob has {} bytes, index covers {cursor}", blob.len()),
        ));
    }
    Ok(Checkpoint {
        config: index.config,
        tensors,
    })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    params: &[(String, Tensor)],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(config, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<(String, Tensor)> {
        vec![
            ("b".into(), Tensor::new(&[2], vec![0.1, -1.0 / 3.0]).unwrap()),
            ("a".into(), Tensor::new(&[1, 3], vec![f64::MIN_POSITIVE, 7.0, -0.0]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig::tiny();
        let bytes = encode_checkpoint(&cfg, &params()).unwrap();
        let ck = decode_checkpoint(&bytes, "mem").unwrap();
        assert_eq!(ck.config, cfg);
        for ((n1, t1), (n2, t2)) in ck.tensors.iter().zip(params().iter()) {
            assert_eq!(n1, n2);
            let bits1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let bits2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits1, bits2);
        }
        assert_eq!(encode_checkpoint(&ck.config, &ck.tensors).unwrap(), bytes);
    }

    #[test]
    fn name_collision() {
        let mut p = params();
        p.push(("a".into(), Tensor::scalar(1.0)));
        assert!(matches!(
            encode_checkpoint(&ModelConfig::tiny(), &p),
            Err(Error::Duplicate { .. })
        ));
    }

    #[test]
    fn corrupt_magic_and_blob_length() {
        let mut bytes = encode_checkpoint(&ModelConfig::tiny(), &params()).unwrap();
        let mut bad = bytes.clone();
        bad[3] ^= 0xff;
        assert!(decode_checkpoint(&bad, "mem").unwrap_err().to_string().contains("magic"));
        bytes.pop();
        assert!(decode_checkpoint(&bytes, "mem").is_err());
        bytes.extend_from_slice(&[0; 9]);
        assert!(decode_checkpoint(&bytes, "mem").is_err());
    }
}
