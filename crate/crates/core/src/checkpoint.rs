//! Checkpoint archive: a tar file holding `config.json`, `manifest.json` and
//! one raw little-endian `f32` array per parameter under `params/`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use hstr_tensor::Tensor;
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::network::{param_specs, Model};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::seed;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub step: u64,
    pub seed: u64,
    pub optimizer: Option<AdamState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub step: u64,
    pub seed: u64,
    pub params: Vec<ManifestEntry>,
    /// Optimiser step count when moments are stored.
    pub optimizer_step: Option<u64>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64, seed: u64, optimizer: Option<AdamState>) -> Self {
        Self { config: model.config.clone(), params: model.params.clone(), step, seed, optimizer }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.config.clone(), self.params.clone())
    }

    /// Short content hash of the parameters, stable across saves.
    pub fn id(&self) -> String {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (name, t) in self.params.iter() {
            for b in name.bytes().chain(t.iter().flat_map(|v| v.to_le_bytes())) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{:016x}", seed::derive(h, &[]))
    }
}

fn encode(t: &Tensor<f32>) -> Vec<u8> {
    t.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode(name: &str, bytes: &[u8], shape: &[usize]) -> Result<Tensor<f32>> {
    let n: usize = shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Checkpoint(format!("{name}: {} bytes for shape {shape:?}", bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Tensor::from_shape_vec(IxDyn(shape), data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
}

fn append(builder: &mut tar::Builder<impl Write>, path: &str, bytes: &[u8]) -> std::io::Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_cksum();
    builder.append_data(&mut header, path, bytes)
}

/// Writes atomically through a temporary sibling file. Archives are
/// byte-for-byte reproducible for equal contents.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        step: ckpt.step,
        seed: ckpt.seed,
        params: ckpt
            .params
            .iter()
            .map(|(k, t)| ManifestEntry { name: k.clone(), dtype: "f32".into(), shape: t.shape().to_vec() })
            .collect(),
        optimizer_step: ckpt.optimizer.as_ref().map(|o| o.t),
    };
    let tmp = path.with_extension("tar.partial");
    let io = |e| Error::io(&tmp, e);
    let file = File::create(&tmp).map_err(io)?;
    let mut b = tar::Builder::new(BufWriter::new(file));
    append(&mut b, "config.json", &serde_json::to_vec_pretty(&ckpt.config)?).map_err(io)?;
    append(&mut b, "manifest.json", &serde_json::to_vec_pretty(&manifest)?).map_err(io)?;
    for (name, t) in ckpt.params.iter() {
        append(&mut b, &format!("params/{name}.bin"), &encode(t)).map_err(io)?;
    }
    if let Some(opt) = &ckpt.optimizer {
        for (dir, store) in [("m", &opt.m), ("v", &opt.v)] {
            for (name, t) in store.iter() {
                append(&mut b, &format!("optim/{dir}/{name}.bin"), &encode(t)).map_err(io)?;
            }
        }
    }
    let mut w = b.into_inner().map_err(io)?;
    w.flush().map_err(io)?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads and validates an archive against the configuration it carries.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut archive = tar::Archive::new(file);
    let mut files = BTreeMap::new();
    let bad = |e: std::io::Error| Error::Checkpoint(format!("{}: {e}", path.display()));
    for entry in archive.entries().map_err(bad)? {
        let mut entry = entry.map_err(bad)?;
        let name = entry.path().map_err(bad)?.to_string_lossy().into_owned();
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(bad)?;
        files.insert(name, bytes);
    }
    let get = |name: &str| {
        files.get(name).ok_or_else(|| Error::Checkpoint(format!("{}: missing {name}", path.display())))
    };
    let manifest: Manifest = serde_json::from_slice(get("manifest.json")?)
        .map_err(|e| Error::Checkpoint(format!("{}: manifest: {e}", path.display())))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} is not supported (expected {FORMAT_VERSION})",
            path.display(),
            manifest.version
        )));
    }
    let config: ModelConfig = serde_json::from_slice(get("config.json")?)
        .map_err(|e| Error::Checkpoint(format!("{}: config: {e}", path.display())))?;
    let read_store = |prefix: &str| -> Result<ParamStore> {
        let mut map = BTreeMap::new();
        for e in &manifest.params {
            if e.dtype != "f32" {
                return Err(Error::Checkpoint(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let t = decode(&e.name, get(&format!("{prefix}/{}.bin", e.name))?, &e.shape)?;
            map.insert(e.name.clone(), t);
        }
        Ok(ParamStore::from_map(map))
    };
    let params = read_store("params")?;
    params.check_against(&param_specs(&config))?;
    let optimizer = match manifest.optimizer_step {
        Some(t) => Some(AdamState { t, m: read_store("optim/m")?, v: read_store("optim/v")? }),
        None => None,
    };
    Ok(Checkpoint { config, params, step: manifest.step, seed: manifest.seed, optimizer })
}

/// Loads an archive for use under `expected`; parameters must resolve in
/// that configuration's namespace.
pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.params.check_against(&param_specs(expected))?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{MotionConfig, Variant};

    fn model(v: Variant) -> Model {
        let cfg = ModelConfig { variant: v, motion: MotionConfig { widths: [4, 4, 4], ..Default::default() }, ..Default::default() };
        Model::new(cfg, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(Variant::Full);
        let mut opt = AdamState::new(&m.params);
        opt.t = 3;
        opt.m.get_mut("fusion.final.bias").unwrap().fill(0.25);
        let ck = Checkpoint::from_model(&m, 7, 11, Some(opt));
        let path = dir.path().join("a/ck.tar");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.id(), ck.id());
        let again = dir.path().join("b.tar");
        save_checkpoint(&back, &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(Variant::I);
        let path = dir.path().join("v0.tar");
        let file = File::create(&path).unwrap();
        let mut b = tar::Builder::new(file);
        append(&mut b, "config.json", &serde_json::to_vec(&m.config).unwrap()).unwrap();
        let manifest = Manifest { version: 0, step: 0, seed: 0, params: vec![], optimizer_step: None };
        append(&mut b, "manifest.json", &serde_json::to_vec(&manifest).unwrap()).unwrap();
        b.finish().unwrap();
        drop(b);
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version 0"), "{err}");
    }

    #[test]
    fn wrong_variant_names_first_unknown_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("full.tar");
        save_checkpoint(&Checkpoint::from_model(&model(Variant::Full), 0, 0, None), &path).unwrap();
        let err = load_for(&path, &model(Variant::B).config).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("\"context.deform0.bias\""), "{err}");
    }

    #[test]
    fn truncated_parameter_is_rejected() {
        let err = decode("w", &[0u8; 7], &[2]).unwrap_err().to_string();
        assert!(err.contains("7 bytes"));
    }
}
