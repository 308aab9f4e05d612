//! Minimal CNN engine: layer graph, manual backward pass, Adam, and model
//! bundles.
//!
//! Every tensor a model owns lives in one registry keyed by
//! `(layer index, slot name)`. Each slot carries its own freeze flag; the
//! backward pass only materializes gradients for slots that are trainable,
//! and [`adam_step`] refuses gradients for frozen slots.

mod adam;
mod backbones;
mod bundle;
mod layer;
mod loss;
mod model;

pub use adam::{adam_step, AdamState};
pub use backbones::{Backbone, InputLayout};
pub use bundle::{load_model, save_model, BundleManifest, FORMAT_VERSION};
pub use layer::LayerSpec;
pub use loss::softmax_cross_entropy;
pub use model::{ForwardCache, Gradients, Mode, Model};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const WEIGHT: &str = "weight";
pub const BIAS: &str = "bias";
pub const GAMMA: &str = "gamma";
pub const BETA: &str = "beta";
pub const RUNNING_MEAN: &str = "running_mean";
pub const RUNNING_VAR: &str = "running_var";

/// Registry key: owning layer plus slot name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotKey {
    pub layer: usize,
    pub name: String,
}

impl SlotKey {
    pub fn new(layer: usize, name: impl Into<String>) -> Self {
        Self {
            layer,
            name: name.into(),
        }
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer{}.{}", self.layer, self.name)
    }
}

/// What a slot is for. Only `Backbone` slots count toward the full
/// fine-tuning budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotRole {
    /// Weights, biases, BN affine parameters of the host network.
    Backbone,
    /// Running statistics; updated by forward passes, never by the optimizer.
    Buffer,
    /// Adapter tensors (TT cores, LoRA factors).
    Adapter,
    /// Snapshot of an adapter tensor before it was re-initialized.
    AdapterInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
    pub role: SlotRole,
}

pub type ParamStore = BTreeMap<SlotKey, Param>;
