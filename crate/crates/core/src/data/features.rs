//! Frozen backbone features.
//!
//! Layout (little-endian): `I2MV`, u32 version = 1, u32 count, u32 N,
//! u32 d_backbone, then `count * (N + 1) * d_backbone` f32 values. Row 0 of
//! every record is the backbone CLS feature. Class names live in a sidecar
//! file with the same stem and a `.labels` suffix, one per line.

use std::path::{Path, PathBuf};

use i2mv_tensor::Tensor;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"I2MV";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct PatchFeatureRecord {
    pub class_name: String,
    /// `(N + 1) x d_backbone`
    pub features: Tensor,
}

impl PatchFeatureRecord {
    pub fn num_patches(&self) -> usize {
        self.features.shape()[0] - 1
    }

    pub fn d_backbone(&self) -> usize {
        self.features.shape()[1]
    }
}

pub fn labels_path(path: &Path) -> PathBuf {
    path.with_extension("labels")
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Decodes a feature blob plus its label lines.
pub fn decode_features(bytes: &[u8], labels: &str, origin: &str) -> Result<Vec<PatchFeatureRecord>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            origin,
            format!("byte {}", bytes.len()),
            "truncated header",
        ));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(origin, "byte 0", "bad magic, expected I2MV"));
    }
    let version = read_u32(bytes, 4);
    if version != FEATURE_VERSION {
        return Err(Error::format(
            origin,
            "byte 4",
            format!("unsupported version {version}"),
        ));
    }
    let count = read_u32(bytes, 8) as usize;
    let n = read_u32(bytes, 12) as usize;
    let d = read_u32(bytes, 16) as usize;
    if n == 0 || d == 0 {
        return Err(Error::format(
            origin,
            "byte 12",
            format!("need N >= 1 and d >= 1, got N={n} d={d}"),
        ));
    }
    let per_record = (n + 1)
        .checked_mul(d)
        .filter(|v| v.checked_mul(4).is_some())
        .ok_or_else(|| Error::format(origin, "byte 12", "record size overflows"))?;
    let expected = count
        .checked_mul(per_record)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(origin, "byte 8", "record count overflows"))?;
    if bytes.len() < expected {
        return Err(Error::format(
            origin,
            format!("byte {}", bytes.len()),
            format!("truncated blob: expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            origin,
            format!("byte {expected}"),
            "trailing bytes after last record",
        ));
    }
    let names: Vec<&str> = labels.lines().filter(|l| !l.trim().is_empty()).collect();
    if names.len() != count {
        return Err(Error::format(
            format!("{origin}.labels"),
            format!("line {}", names.len() + 1),
            format!("{} labels for {count} records", names.len()),
        ));
    }

    let mut records = Vec::with_capacity(count);
    let blob = &bytes[HEADER_LEN..];
    for (r, name) in names.iter().enumerate() {
        let start = r * per_record * 4;
        let mut data = Vec::with_capacity(per_record);
        for (k, chunk) in blob[start..start + per_record * 4].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::format(
                    origin,
                    format!("byte {}", HEADER_LEN + start + 4 * k),
                    format!("non-finite value in record {r}"),
                ));
            }
            data.push(f64::from(v));
        }
        records.push(PatchFeatureRecord {
            class_name: name.trim().to_string(),
            features: Tensor::new(&[n + 1, d], data)?,
        });
    }
    Ok(records)
}

/// Encodes records; all must share N and d_backbone. Values are stored as f32.
pub fn encode_features(records: &[PatchFeatureRecord]) -> Result<(Vec<u8>, String)> {
    let (n, d) = match records.first() {
        Some(r) => (r.num_patches(), r.d_backbone()),
        None => (1, 1),
    };
    let mut bytes = Vec::with_capacity(HEADER_LEN + records.len() * (n + 1) * d * 4);
    bytes.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, records.len() as u32, n as u32, d as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut labels = String::new();
    for (i, r) in records.iter().enumerate() {
        if r.features.shape() != [n + 1, d] {
            return Err(Error::Shape(format!(
                "record {i} has shape {:?}, expected [{}, {d}]",
                r.features.shape(),
                n + 1
            )));
        }
        if r.class_name.contains('\n') || r.class_name.trim().is_empty() {
            return Err(Error::Validation(format!("record {i}: unusable class name")));
        }
        for &v in r.features.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        labels.push_str(&r.class_name);
        labels.push('\n');
    }
    Ok((bytes, labels))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<PatchFeatureRecord>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let lpath = labels_path(path);
    let labels = std::fs::read_to_string(&lpath).map_err(|e| Error::io(&lpath, e))?;
    decode_features(&bytes, &labels, &path.display().to_string())
}

pub fn save_features(path: impl AsRef<Path>, records: &[PatchFeatureRecord]) -> Result<()> {
    let path = path.as_ref();
    let (bytes, labels) = encode_features(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let lpath = labels_path(path);
    std::fs::write(&lpath, labels).map_err(|e| Error::io(&lpath, e))
}
