//! Checkpoint directories.
//!
//! ```text
//! <dir>/spec.json          architecture, vocabularies and label sets
//! <dir>/manifest.json      one entry per parameter: name, shape, group, file
//! <dir>/params/<name>.f32  row-major little-endian f32 values
//! ```
//!
//! Values are stored as `f32`, so a save/load round trip rounds every
//! parameter to single precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelSpec};
use crate::params::Group;
use crate::tensor::Matrix;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub group: Group,
    /// Path relative to the checkpoint directory.
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub params: Vec<ManifestEntry>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_f32(m: &Matrix) -> Vec<u8> {
    m.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8], rows: usize, cols: usize) -> Result<Matrix> {
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes for a {rows} × {cols} array, found {}",
            rows * cols * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

/// Write `model` to `dir`, creating it if needed.
pub fn save(model: &Model, dir: &Path) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir).map_err(|e| Error::io(&params_dir, e))?;
    let mut entries = Vec::with_capacity(model.store.len());
    for (_, p) in model.store.iter() {
        let file = format!("params/{}.f32", p.name);
        write(&dir.join(&file), &encode_f32(&p.value))?;
        let (r, c) = p.value.shape();
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape: [r, c],
            group: p.group,
            file,
        });
    }
    let manifest = Manifest {
        format: FORMAT_VERSION,
        params: entries,
    };
    write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    write(&dir.join("spec.json"), serde_json::to_string_pretty(&model.spec)?.as_bytes())?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_slice(&read(&dir.join("manifest.json"))?)?;
    if m.format != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {} (expected {FORMAT_VERSION})",
            m.format
        )));
    }
    Ok(m)
}

pub fn load_spec(dir: &Path) -> Result<ModelSpec> {
    Ok(serde_json::from_slice(&read(&dir.join("spec.json"))?)?)
}

/// Rebuild the architecture from `spec.json` and fill in every parameter.
/// Missing, extra, mis-grouped or mis-shaped parameters are errors.
pub fn load(dir: &Path) -> Result<Model> {
    let spec = load_spec(dir)?;
    let manifest = load_manifest(dir)?;
    let mut model = Model::build(spec, None)?;
    if manifest.params.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} parameters, the architecture has {}",
            manifest.params.len(),
            model.store.len()
        )));
    }
    for e in &manifest.params {
        let id = model
            .store
            .id(&e.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", e.name)))?;
        let group = model.store.get(id).group;
        if group != e.group {
            return Err(Error::Checkpoint(format!(
                "parameter {} is tagged {}, expected {group}",
                e.name, e.group
            )));
        }
        let value = decode_f32(&read(&dir.join(&e.file))?, e.shape[0], e.shape[1])?;
        model.store.assign(&e.name, value)?;
    }
    Ok(model)
}
