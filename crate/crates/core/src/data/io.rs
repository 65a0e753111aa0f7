//! On-disk feature datasets: `manifest.json` plus one `features.bin`
//! payload of row-major little-endian `f64` values.
//!
//! Each record holds the audio row followed by the visual patch rows. The
//! manifest stores byte offsets per record and the payload's CRC-32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, FeatureSample, Split};
use crate::error::{CignError, Result};
use crate::fsio::write_atomic;
use crate::model::checkpoint::{decode_f64_le, encode_f64_le};
use crate::numerics::Tensor;

pub const FEATURES_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "features.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub id: usize,
    pub label: usize,
    pub split: Split,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub name: String,
    pub num_classes: usize,
    pub dim: usize,
    pub patches: usize,
    pub payload_file: String,
    pub payload_bytes: u64,
    pub crc32: u32,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read(&path).map_err(|e| CignError::io(&path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }
}

/// Writes the dataset into `dir` and returns the manifest.
pub fn save_features(ds: &FeatureDataset, dir: &Path) -> Result<Manifest> {
    ds.validate()?;
    let mut payload = Vec::new();
    let mut records = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        let offset = payload.len() as u64;
        payload.extend(encode_f64_le(s.audio.data()));
        payload.extend(encode_f64_le(s.visual.data()));
        records.push(Record {
            id: s.id,
            label: s.label,
            split: s.split,
            offset,
            length: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format_version: FEATURES_VERSION,
        name: ds.name.clone(),
        num_classes: ds.num_classes,
        dim: ds.dim,
        patches: ds.patches,
        payload_file: PAYLOAD_FILE.to_string(),
        payload_bytes: payload.len() as u64,
        crc32: crc32fast::hash(&payload),
        records,
    };
    write_atomic(&dir.join(PAYLOAD_FILE), &payload)?;
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_features(dir: &Path) -> Result<FeatureDataset> {
    let manifest = Manifest::read(dir)?;
    if manifest.format_version != FEATURES_VERSION {
        return Err(CignError::Version {
            found: manifest.format_version,
            expected: FEATURES_VERSION,
        });
    }
    let path = dir.join(&manifest.payload_file);
    let corrupt = |detail: String| CignError::Corrupt {
        path: path.clone(),
        detail,
    };
    let payload = fs::read(&path).map_err(|e| CignError::io(&path, e))?;
    if payload.len() as u64 != manifest.payload_bytes {
        return Err(corrupt(format!(
            "payload has {} bytes, manifest declares {}",
            payload.len(),
            manifest.payload_bytes
        )));
    }
    let crc = crc32fast::hash(&payload);
    if crc != manifest.crc32 {
        return Err(corrupt(format!("CRC-32 {crc:08x} does not match manifest {:08x}", manifest.crc32)));
    }
    let (d, p) = (manifest.dim, manifest.patches);
    let expected_len = ((1 + p) * d * 8) as u64;
    let mut cursor = 0u64;
    let mut samples = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        if r.length != expected_len || r.offset != cursor {
            return Err(corrupt(format!(
                "record {} at offset {} with length {} (expected offset {cursor}, length {expected_len})",
                r.id, r.offset, r.length
            )));
        }
        cursor += r.length;
        if cursor > manifest.payload_bytes {
            return Err(corrupt(format!("record {} runs past the payload end", r.id)));
        }
        let bytes = &payload[r.offset as usize..cursor as usize];
        let values = decode_f64_le(bytes).ok_or_else(|| corrupt(format!("record {} is misaligned", r.id)))?;
        samples.push(FeatureSample {
            id: r.id,
            audio: Tensor::new(vec![1, d], values[..d].to_vec())?,
            visual: Tensor::new(vec![p, d], values[d..].to_vec())?,
            label: r.label,
            split: r.split,
        });
    }
    if cursor != manifest.payload_bytes {
        return Err(corrupt(format!(
            "records cover {cursor} of {} payload bytes",
            manifest.payload_bytes
        )));
    }
    let ds = FeatureDataset {
        name: manifest.name,
        num_classes: manifest.num_classes,
        dim: d,
        patches: p,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn small() -> FeatureDataset {
        generate_synthetic(&SyntheticSpec {
            num_classes: 4,
            dim: 6,
            patches: 3,
            train_per_class: 5,
            val_per_class: 1,
            test_per_class: 2,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ds = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_features(&ds, a.path()).unwrap();
        let loaded = load_features(a.path()).unwrap();
        assert_eq!(loaded, ds);
        save_features(&loaded, b.path()).unwrap();
        assert_eq!(
            fs::read(a.path().join(PAYLOAD_FILE)).unwrap(),
            fs::read(b.path().join(PAYLOAD_FILE)).unwrap()
        );
    }

    #[test]
    fn thousand_samples_round_trip_exactly() {
        let ds = generate_synthetic(&SyntheticSpec {
            num_classes: 10,
            train_per_class: 80,
            test_per_class: 20,
            ..SyntheticSpec::default()
        })
        .unwrap();
        assert_eq!(ds.samples.len(), 1000);
        let dir = tempfile::tempdir().unwrap();
        save_features(&ds, dir.path()).unwrap();
        let back = load_features(dir.path()).unwrap();
        for (x, y) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(x.audio.data(), y.audio.data());
            assert_eq!(x.visual.data(), y.visual.data());
            assert_eq!((x.id, x.label, x.split), (y.id, y.label, y.split));
        }
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        save_features(&small(), dir.path()).unwrap();
        let p = dir.path().join(PAYLOAD_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_features(dir.path()), Err(CignError::Corrupt { .. })));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_features(&small(), dir.path()).unwrap();
        let p = dir.path().join(PAYLOAD_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[17] ^= 0x40;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_features(dir.path()), Err(CignError::Corrupt { .. })));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_features(&small(), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        m["format_version"] = 2.into();
        fs::write(&p, serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(load_features(dir.path()), Err(CignError::Version { found: 2, .. })));
    }
}
