//! Parameter checkpoints: a JSON manifest next to a flat little-endian `f64`
//! blob. The manifest lists each array's name, shape and offset (in values)
//! into the blob, followed by optional Adam moments.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::params::ParamStore;
use crate::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub step: u64,
    pub first_moment: Vec<ArrayEntry>,
    pub second_moment: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    /// What the parameters belong to, e.g. `"vae"` or `"sar"`.
    pub kind: String,
    pub config_hash: String,
    /// Model configuration needed to rebuild the architecture.
    pub config: serde_json::Value,
    pub blob: String,
    pub params: Vec<ArrayEntry>,
    pub optimizer: Option<OptimizerEntry>,
}

pub const CHECKPOINT_FORMAT: &str = "sarmesh-checkpoint-v1";

/// Blob path belonging to a manifest path (`x.json` -> `x.bin`).
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

pub fn save_checkpoint(
    manifest_path: &Path,
    kind: &str,
    config: &serde_json::Value,
    config_hash: &str,
    store: &ParamStore,
    optimizer: Option<&Adam>,
) -> Result<(), Error> {
    let mut blob: Vec<u8> = Vec::with_capacity(store.num_scalars() * 8);
    let mut push = |name: &str, a: &Array2<f64>, entries: &mut Vec<ArrayEntry>| {
        entries.push(ArrayEntry {
            name: name.to_string(),
            shape: [a.nrows(), a.ncols()],
            offset: blob.len() / 8,
        });
        for v in a.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    let mut params = Vec::new();
    for id in store.ids() {
        push(store.name(id), store.value(id), &mut params);
    }
    let optimizer = optimizer.map(|adam| {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for id in store.ids() {
            push(store.name(id), &adam.m[id.index()], &mut first);
        }
        for id in store.ids() {
            push(store.name(id), &adam.v[id.index()], &mut second);
        }
        OptimizerEntry {
            step: adam.step,
            first_moment: first,
            second_moment: second,
        }
    });
    let bpath = blob_path(manifest_path);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        kind: kind.to_string(),
        config_hash: config_hash.to_string(),
        config: config.clone(),
        blob: bpath
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        params,
        optimizer,
    };
    fs::write(&bpath, &blob)?;
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn read_array(blob: &[f64], e: &ArrayEntry) -> Result<Array2<f64>, Error> {
    let n = e.shape[0] * e.shape[1];
    let data = blob
        .get(e.offset..e.offset + n)
        .ok_or_else(|| Error::Format(format!("blob too short for '{}'", e.name)))?;
    Ok(Array2::from_shape_vec((e.shape[0], e.shape[1]), data.to_vec()).expect("shape matches length"))
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<Checkpoint, Error> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "unknown checkpoint format '{}'",
            manifest.format
        )));
    }
    let bytes = fs::read(manifest_path.with_file_name(&manifest.blob))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("checkpoint blob length is not a multiple of 8".into()));
    }
    let blob: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params = ParamStore::new();
    for e in &manifest.params {
        params.add(&e.name, read_array(&blob, e)?)?;
    }
    let optimizer = match &manifest.optimizer {
        Some(o) => Some(Adam {
            m: o.first_moment
                .iter()
                .map(|e| read_array(&blob, e))
                .collect::<Result<_, _>>()?,
            v: o.second_moment
                .iter()
                .map(|e| read_array(&blob, e))
                .collect::<Result<_, _>>()?,
            step: o.step,
        }),
        None => None,
    };
    Ok(Checkpoint {
        manifest,
        params,
        optimizer,
    })
}
