//! Model checkpoints: `manifest.json` plus one WOT1 blob per parameter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, wot, write_json};
use crate::error::{Error, Result};
use crate::numerics::ParamSet;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Model family, e.g. `"denoiser"`.
    pub kind: String,
    /// Architecture hyperparameters.
    pub architecture: serde_json::Value,
    /// Anything else worth keeping next to the weights (schedule, seed).
    #[serde(default)]
    pub extra: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

impl Manifest {
    pub fn architecture<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.architecture.clone())?)
    }
}

pub fn save_checkpoint<A: Serialize>(
    dir: &Path,
    kind: &str,
    architecture: &A,
    extra: serde_json::Value,
    model: &impl ParamSet,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut params = Vec::new();
    for (i, (name, t)) in model.named_params().into_iter().enumerate() {
        let file = format!("{i:03}_{name}.wot");
        wot::save(&dir.join(&file), t)?;
        params.push(ParamEntry {
            name,
            shape: t.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        kind: kind.to_string(),
        architecture: serde_json::to_value(architecture)?,
        extra,
        params,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path, kind: &str) -> Result<Manifest> {
    let m: Manifest = read_json(&dir.join(MANIFEST))?;
    if m.kind != kind {
        return Err(Error::Format(format!(
            "checkpoint holds a {} model, expected {kind}",
            m.kind
        )));
    }
    Ok(m)
}

/// Overwrite the parameters of `model` (already built from the manifest's
/// architecture) with the stored blobs.
pub fn load_params(dir: &Path, manifest: &Manifest, model: &mut impl ParamSet) -> Result<()> {
    let names: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if names.len() != manifest.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model has {}",
            manifest.params.len(),
            names.len()
        )));
    }
    for ((name, shape), (entry, slot)) in names.iter().zip(manifest.params.iter().zip(model.params_mut())) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Format(format!(
                "parameter {} {:?} does not match model {} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        let t = wot::load(&dir.join(&entry.file))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Format(format!("blob {} has shape {:?}", entry.file, t.shape())));
        }
        *slot = t;
    }
    Ok(())
}
