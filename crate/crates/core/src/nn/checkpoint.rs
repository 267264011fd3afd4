//! Checkpoint files: a JSON manifest plus a little-endian blob in the
//! model's own precision (f32 or f64), so round trips are exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub params: Vec<ParamEntry>,
    /// Free-form model description stored alongside the weights.
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn save<S: Scalar>(dir: &Path, store: &ParamStore<S>, meta: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let wide = std::mem::size_of::<S>() == 8;
    let mut blob = Vec::with_capacity(store.num_scalars() * if wide { 8 } else { 4 });
    let mut params = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: [p.value.rows(), p.value.cols()],
            offset: blob.len(),
        });
        for &x in p.value.data() {
            if wide {
                blob.extend_from_slice(&x.as_f64().to_le_bytes());
            } else {
                blob.extend_from_slice(&x.as_f32().to_le_bytes());
            }
        }
    }
    let manifest = CheckpointManifest {
        dtype: if wide { "f64" } else { "f32" }.into(),
        params,
        meta,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let raw = fs::read(dir.join(MANIFEST_FILE))?;
    Ok(serde_json::from_slice(&raw)?)
}

/// Loads every stored tensor in manifest order.
pub fn load<S: Scalar>(dir: &Path) -> Result<(ParamStore<S>, serde_json::Value)> {
    let manifest = read_manifest(dir)?;
    let width = match manifest.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Data(format!("unsupported checkpoint dtype {other}"))),
    };
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let mut store = ParamStore::new();
    for e in &manifest.params {
        let n = e.shape[0] * e.shape[1];
        let end = e.offset + width * n;
        if end > blob.len() {
            return Err(Error::Data(format!(
                "parameter {} extends past end of blob ({} > {})",
                e.name,
                end,
                blob.len()
            )));
        }
        let data = blob[e.offset..end]
            .chunks_exact(width)
            .map(|b| match b.try_into() {
                Ok(b8) => S::of(f64::from_le_bytes(b8)),
                Err(_) => S::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
            })
            .collect();
        store.add(e.name.clone(), Tensor::from_vec(e.shape[0], e.shape[1], data)?);
    }
    Ok((store, manifest.meta))
}

/// Copies values from `src` into `dst` by name; shapes must agree and every
/// parameter of `dst` must be present.
pub fn restore_into<S: Scalar>(dst: &mut ParamStore<S>, src: &ParamStore<S>) -> Result<()> {
    let ids: Vec<_> = dst.ids().collect();
    for id in ids {
        let name = dst.name(id).to_string();
        let sid = src
            .id(&name)
            .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {name}")))?;
        let v = src.value(sid);
        if v.shape() != dst.value(id).shape() {
            return Err(Error::shape(
                "checkpoint parameter",
                format!("{:?}", dst.value(id).shape()),
                format!("{:?}", v.shape()),
            ));
        }
        *dst.value_mut(id) = v.clone();
    }
    Ok(())
}

pub fn checkpoint_dir(run_dir: &Path, label: &str) -> PathBuf {
    run_dir.join("checkpoints").join(label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f32>::new();
        store.add("a.w", Tensor::from_rows(&[[1.5, -2.25], [3.0, 0.1]]));
        store.add("a.b", Tensor::from_rows(&[[0.125]]));
        save(dir.path(), &store, serde_json::json!({"k": 1})).unwrap();
        let (back, meta) = load::<f32>(dir.path()).unwrap();
        assert_eq!(meta["k"], 1);
        for (id, p) in store.iter() {
            assert_eq!(back.name(id), p.name);
            assert_eq!(back.value(id), &p.value);
        }
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m.params[1].offset, 16);
        assert_eq!(m.params[0].shape, [2, 2]);
    }

    #[test]
    fn f64_checkpoints_keep_full_precision_and_load_as_f32() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_rows(&[[0.1, 1.0 / 3.0]]));
        save(dir.path(), &store, serde_json::Value::Null).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap().dtype, "f64");
        let (back, _) = load::<f64>(dir.path()).unwrap();
        assert_eq!(back.value(back.id("w").unwrap()).data(), &[0.1, 1.0 / 3.0]);
        let (narrow, _) = load::<f32>(dir.path()).unwrap();
        assert_eq!(narrow.value(narrow.id("w").unwrap()).data(), &[0.1f32, 1.0 / 3.0]);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f64>::new();
        store.add("x", Tensor::zeros(3, 3));
        save(dir.path(), &store, serde_json::Value::Null).unwrap();
        fs::write(dir.path().join(BLOB_FILE), [0u8; 8]).unwrap();
        assert!(load::<f64>(dir.path()).is_err());
    }
}
