//! Model checkpoints: `manifest.json` plus one little-endian `f64` file per
//! tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CignError, Result};
use crate::fsio::write_atomic;
use crate::model::{ClassTokenBank, CignModel, ModelConfig, TOKENS_NAME};
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const FROZEN_NAME: &str = "bank.frozen_old";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    class_ids: Vec<usize>,
    old_count: usize,
    params: Vec<TensorEntry>,
    frozen_old: Option<TensorEntry>,
}

pub fn encode_f64_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64_le(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    )
}

fn write_tensor(dir: &Path, name: &str, t: &Tensor) -> Result<TensorEntry> {
    let file = format!("{name}.bin");
    let path = dir.join(&file);
    write_atomic(&path, &encode_f64_le(t.data()))?;
    Ok(TensorEntry {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        file,
    })
}

fn read_tensor(dir: &Path, entry: &TensorEntry) -> Result<Tensor> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| CignError::io(&path, e))?;
    let data = decode_f64_le(&bytes).ok_or_else(|| CignError::Corrupt {
        path: path.clone(),
        detail: format!("{} bytes is not a whole number of f64 values", bytes.len()),
    })?;
    Tensor::new(entry.shape.clone(), data).map_err(|_| CignError::Corrupt {
        path,
        detail: format!("payload does not match shape {:?}", entry.shape),
    })
}

pub fn save(model: &CignModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CignError::io(dir, e))?;
    let params = model
        .named_params()
        .into_iter()
        .map(|(name, t)| write_tensor(dir, &name, t))
        .collect::<Result<Vec<_>>>()?;
    let frozen_old = model
        .bank
        .frozen_old()
        .map(|t| write_tensor(dir, FROZEN_NAME, t))
        .transpose()?;
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        config: model.config,
        class_ids: model.bank.class_ids().to_vec(),
        old_count: model.bank.old_count(),
        params,
        frozen_old,
    };
    let path = dir.join(MANIFEST);
    write_atomic(&path, &serde_json::to_vec_pretty(&manifest)?)
}

pub fn load(dir: &Path) -> Result<CignModel> {
    let path = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(|e| CignError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(CignError::Version {
            found: manifest.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut tensors = manifest
        .params
        .iter()
        .map(|e| Ok((e.name.clone(), read_tensor(dir, e)?)))
        .collect::<Result<Vec<_>>>()?;
    let tokens = match tensors.first() {
        Some((name, _)) if name == TOKENS_NAME => Some(tensors.remove(0).1),
        _ => None,
    };
    let frozen = manifest
        .frozen_old
        .as_ref()
        .map(|e| read_tensor(dir, e))
        .transpose()?;
    let bank = ClassTokenBank::from_parts(
        tokens,
        manifest.class_ids.clone(),
        manifest.old_count,
        frozen,
        manifest.config.dim,
    )?;

    // Build a model with the right layout, then overwrite every tensor.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut model = CignModel::new(manifest.config, &mut rng)?;
    model.bank = bank;
    let task_width = tensors
        .iter()
        .find(|(n, _)| n == "token_head.w")
        .map(|(_, t)| t.shape()[1]);
    if let Some(w) = task_width {
        model.params.token_head = Some(crate::model::Linear {
            w: Tensor::zeros(&[manifest.config.dim, w]),
            b: Tensor::zeros(&[1, w]),
        });
    }
    let mut expected = 0;
    model.params.visit(&mut |_, _| expected += 1);
    if expected != tensors.len() {
        return Err(CignError::Corrupt {
            path,
            detail: format!("expected {expected} tensors, found {}", tensors.len()),
        });
    }
    let mut params = model.params.clone();
    let mut iter = tensors.into_iter();
    let mut mismatch = None;
    params.visit_mut(&mut |name, slot| {
        let (stored_name, t) = iter.next().expect("length checked");
        if stored_name != name || t.shape() != slot.shape() {
            mismatch.get_or_insert(format!("{stored_name} {:?} vs {name} {:?}", t.shape(), slot.shape()));
        }
        *slot = t;
    });
    if let Some(detail) = mismatch {
        return Err(CignError::Corrupt { path, detail });
    }
    model.params = params;
    Ok(model)
}
