//! Model bundles: a directory holding `manifest.json` and `params.bin`.
//!
//! `params.bin` is every registry slot's data as little-endian `f64`,
//! concatenated in manifest order. The manifest records each slot's shape,
//! byte offset, role and freeze flag, plus the layer list and any adapter
//! records, so that a save/load/save cycle reproduces both files byte for
//! byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::model::Model;
use super::{Param, ParamStore, SlotKey, SlotRole};
use crate::error::{Error, Result};
use crate::peft::{AdapterState, PeftRecord};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub layer: usize,
    pub name: String,
    pub role: SlotRole,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterEntry {
    pub layer: usize,
    pub adapter: AdapterState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub slots: Vec<SlotEntry>,
    pub adapters: Vec<AdapterEntry>,
    pub peft: Option<PeftRecord>,
}

impl BundleManifest {
    pub fn from_model(model: &Model) -> Self {
        let mut offset = 0u64;
        let slots = model
            .params()
            .iter()
            .map(|(k, p)| {
                let byte_len = (p.value.len() * 8) as u64;
                let entry = SlotEntry {
                    layer: k.layer,
                    name: k.name.clone(),
                    role: p.role,
                    shape: p.value.shape().to_vec(),
                    byte_offset: offset,
                    byte_len,
                    trainable: p.trainable,
                };
                offset += byte_len;
                entry
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            input_shape: model.input_shape().to_vec(),
            layers: model.layers().to_vec(),
            slots,
            adapters: model
                .adapters()
                .iter()
                .map(|(&layer, adapter)| AdapterEntry {
                    layer,
                    adapter: adapter.clone(),
                })
                .collect(),
            peft: model.peft().cloned(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(manifest)
    }
}

pub fn save_model(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = BundleManifest::from_model(model);
    let mut blob = Vec::with_capacity(model.params().values().map(|p| p.value.len() * 8).sum());
    for p in model.params().values() {
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    fs::write(dir.join(PARAMS_FILE), blob)?;
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let manifest = BundleManifest::read(dir)?;
    let blob_path = dir.join(PARAMS_FILE);
    let blob = fs::read(&blob_path)?;
    let fmt_err = |msg: String| Error::Format {
        path: blob_path.clone(),
        msg,
    };

    let mut expected_offset = 0u64;
    let mut params = ParamStore::new();
    for s in &manifest.slots {
        let n: usize = s.shape.iter().product();
        if s.byte_len != (n * 8) as u64 || s.byte_offset != expected_offset {
            return Err(fmt_err(format!(
                "slot layer{}.{} has inconsistent offset/length",
                s.layer, s.name
            )));
        }
        let end = s.byte_offset + s.byte_len;
        if end > blob.len() as u64 {
            return Err(fmt_err(format!(
                "blob is {} bytes, slot layer{}.{} needs bytes up to {end}",
                blob.len(),
                s.layer,
                s.name
            )));
        }
        let bytes = &blob[s.byte_offset as usize..end as usize];
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let key = SlotKey::new(s.layer, s.name.clone());
        let param = Param {
            value: Tensor::new(s.shape.clone(), data)?,
            trainable: s.trainable,
            role: s.role,
        };
        if params.insert(key, param).is_some() {
            return Err(fmt_err(format!(
                "duplicate slot layer{}.{}",
                s.layer, s.name
            )));
        }
        expected_offset = end;
    }
    if expected_offset != blob.len() as u64 {
        return Err(fmt_err(format!(
            "blob has {} trailing bytes",
            blob.len() as u64 - expected_offset
        )));
    }
    let adapters: BTreeMap<usize, AdapterState> = manifest
        .adapters
        .into_iter()
        .map(|a| (a.layer, a.adapter))
        .collect();
    Model::from_parts(
        manifest.input_shape,
        manifest.layers,
        params,
        adapters,
        manifest.peft,
    )
}
