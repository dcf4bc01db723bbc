//! Checkpoints: a JSON manifest next to a flat little-endian `f64` blob
//! holding every group tensor in enumeration order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::params::{FilterGroup, GroupRole, ParamSet};
use super::{ArchitectureSpec, Model};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const FORMAT: &str = "fcnscape-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub role: GroupRole,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub spec: ArchitectureSpec,
    pub seed: u64,
    /// File name of the binary blob, relative to the manifest.
    pub blob: String,
    pub num_params: usize,
    pub groups: Vec<GroupEntry>,
    /// Free-form training provenance (epoch, losses, data source, ...).
    #[serde(default)]
    pub provenance: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub manifest: CheckpointManifest,
    pub params: ParamSet<T>,
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path
        .parent()
        .map(|p| p.join(blob))
        .unwrap_or_else(|| PathBuf::from(blob))
}

/// Writes `<path>` (manifest) and `<path>.bin` (blob).
pub fn write_checkpoint<T: Scalar>(
    path: &Path,
    spec: &ArchitectureSpec,
    seed: u64,
    params: &ParamSet<T>,
    provenance: Map<String, Value>,
) -> Result<CheckpointManifest> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "checkpoint path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let blob = format!("{file_name}.bin");
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: 1,
        spec: spec.clone(),
        seed,
        blob: blob.clone(),
        num_params: params.num_params(),
        groups: params
            .groups()
            .iter()
            .map(|g| GroupEntry {
                name: g.name.clone(),
                role: g.role,
                shape: g.tensor.shape().to_vec(),
            })
            .collect(),
        provenance,
    };
    let mut bytes = Vec::with_capacity(params.num_params() * 8);
    for v in params.iter_values() {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    let bin = blob_path(path, &blob);
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

/// Reads a checkpoint written by [`write_checkpoint`] and checks it against
/// the layout of its architecture.
pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    if manifest.format != FORMAT {
        return Err(Error::format(
            path,
            format!("not a checkpoint manifest (format `{}`)", manifest.format),
        ));
    }
    let bin = blob_path(path, &manifest.blob);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected: usize = manifest
        .groups
        .iter()
        .map(|g| g.shape.iter().product::<usize>())
        .sum();
    if bytes.len() != expected * 8 || expected != manifest.num_params {
        return Err(Error::format(
            &bin,
            format!(
                "blob holds {} bytes, manifest describes {expected} reals",
                bytes.len()
            ),
        ));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))));
    let mut groups = Vec::with_capacity(manifest.groups.len());
    for entry in &manifest.groups {
        let n: usize = entry.shape.iter().product();
        let data: Vec<T> = values.by_ref().take(n).collect();
        let tensor = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| Error::format(path, e.to_string()))?;
        groups.push(FilterGroup {
            name: entry.name.clone(),
            role: entry.role,
            tensor,
        });
    }
    let params = ParamSet::new(groups);
    Model::build(&manifest.spec)?
        .check_params(&params)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(Checkpoint { manifest, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ArchitectureSpec::new(Architecture::Resskip, 2, 2);
        let model = Model::build(&spec).unwrap();
        let params: ParamSet<f64> = model.init_params(42);
        let mut prov = Map::new();
        prov.insert("epoch".into(), Value::from(3));
        let a = dir.path().join("a.ckpt");
        write_checkpoint(&a, &spec, 42, &params, prov.clone()).unwrap();
        let back: Checkpoint<f64> = read_checkpoint(&a).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.manifest.provenance, prov);

        let b = dir.path().join("a2.ckpt");
        write_checkpoint(&b, &spec, 42, &back.params, prov).unwrap();
        assert_eq!(
            fs::read(dir.path().join("a.ckpt.bin")).unwrap(),
            fs::read(dir.path().join("a2.ckpt.bin")).unwrap()
        );
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ArchitectureSpec::new(Architecture::Unet, 1, 2);
        let params: ParamSet<f64> = Model::build(&spec).unwrap().init_params(0);
        let p = dir.path().join("m.ckpt");
        write_checkpoint(&p, &spec, 0, &params, Map::new()).unwrap();
        let bin = dir.path().join("m.ckpt.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&bin, bytes).unwrap();
        let err = read_checkpoint::<f64>(&p).unwrap_err();
        assert!(err.to_string().contains("m.ckpt.bin"));
    }
}
