//! Parameter bundles on disk: one tensor file per parameter, `config.json`
//! and a `manifest.json` with digests of everything.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::model::ToyModel;
use crate::tensor::io::{read_tensor, write_tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
const PARAM_DIR: &str = "params";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub epoch: usize,
    pub dev_wer: f64,
    pub config_hash: String,
    pub params: Vec<ParamEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Write every parameter and buffer of `model` under `dir`.
pub fn save_checkpoint(dir: &Path, model: &ToyModel<f32>, config: &RunConfig, epoch: usize, dev_wer: f64) -> Result<Manifest> {
    fs::create_dir_all(dir.join(PARAM_DIR))?;
    let mut params = Vec::new();
    for p in model.params() {
        let file = format!("{PARAM_DIR}/{}.dct", p.name());
        let value = p.snapshot();
        let mut bytes = Vec::new();
        write_tensor(&value, &mut bytes)?;
        fs::write(dir.join(&file), &bytes)?;
        params.push(ParamEntry { name: p.name().to_string(), file, shape: value.shape().to_vec(), sha256: sha256_hex(&bytes) });
    }
    fs::write(dir.join(CONFIG_FILE), config.to_pretty_json())?;
    let manifest = Manifest { epoch, dev_wer, config_hash: config.config_hash(), params };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Read the manifest and configuration, checking that they agree.
pub fn read_checkpoint_meta(dir: &Path) -> Result<(Manifest, RunConfig)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)
        .map_err(|e| Error::Integrity(format!("manifest: {e}")))?;
    let text = fs::read_to_string(dir.join(CONFIG_FILE))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("checkpoint config: {e}")))?;
    let hash = config.config_hash();
    if hash != manifest.config_hash {
        return Err(Error::Integrity(format!(
            "config hash {hash} does not match manifest {}",
            manifest.config_hash
        )));
    }
    Ok((manifest, config))
}

/// Rebuild the model from a checkpoint, verifying every digest and that the
/// stored parameter set matches the architecture exactly.
pub fn load_checkpoint(dir: &Path) -> Result<(ToyModel<f32>, Manifest, RunConfig)> {
    let (manifest, config) = read_checkpoint_meta(dir)?;
    let model = ToyModel::<f32>::new(config.model.clone(), Some(config.sr_ctc.clone()), config.seed)?;
    let mut entries: BTreeMap<&str, &ParamEntry> = BTreeMap::new();
    for e in &manifest.params {
        if entries.insert(e.name.as_str(), e).is_some() {
            return Err(Error::Integrity(format!("parameter {} listed twice", e.name)));
        }
    }
    let params = model.params();
    if params.len() != entries.len() {
        return Err(Error::Integrity(format!("checkpoint has {} parameters, model needs {}", entries.len(), params.len())));
    }
    for p in params {
        let e = entries.get(p.name()).ok_or_else(|| Error::Integrity(format!("parameter {} missing", p.name())))?;
        let bytes = fs::read(dir.join(&e.file))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(Error::Integrity(format!("digest mismatch for {}", e.file)));
        }
        let value = read_tensor::<f32, _>(&bytes[..])?;
        if value.shape() != p.value().shape() || value.shape() != e.shape.as_slice() {
            return Err(Error::Integrity(format!("shape mismatch for {}", p.name())));
        }
        p.set_value(value);
    }
    Ok((model, manifest, config))
}
