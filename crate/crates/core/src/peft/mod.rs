//! Parameter-efficient fine-tuning attachments over [`crate::nn::Model`].
//!
//! Adapter methods (LoRA-Edge, LoRA-C, linear LoRA) add a parallel weight
//! path `ΔW` to a host conv/dense layer; the layer computes
//! `W * x + ΔW * x` until the adapter is merged into `W`. Mask-only methods
//! (bias, BN, full fine-tuning) just flip freeze flags.

mod lora;
mod lora_edge;
mod report;
mod tuning;

pub use lora::{attach_lora_c, attach_lora_linear, lora_c_param_count, LoraAdapter, LoraCRank};
pub use lora_edge::{
    attach_lora_edge, attach_lora_edge_with, core_slot, init_slot, lora_edge_forward,
    lora_edge_grad_core1, restore_zeroed_cores, set_core, CoreInit, LoraEdgeAdapter,
    LoraEdgeOptions,
};
pub use report::{param_report, LayerCount, ParamReport};
pub use tuning::{apply_bias_tuning, apply_bn_tuning, apply_full_finetune};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Model, ParamStore, SlotKey, SlotRole, BIAS, WEIGHT};
use crate::tensor::Tensor;

/// Fine-tuning method applied to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LoraEdge,
    LoraC,
    LoraLinear,
    Bias,
    Bn,
    Full,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Self::LoraEdge,
        Self::LoraC,
        Self::LoraLinear,
        Self::Bias,
        Self::Bn,
        Self::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::LoraEdge => "lora-edge",
            Self::LoraC => "lora-c",
            Self::LoraLinear => "lora-linear",
            Self::Bias => "bias",
            Self::Bn => "bn",
            Self::Full => "full",
        }
    }

    /// Adam learning rate used when none is given: 0.01 for PEFT methods,
    /// 0.001 for full fine-tuning.
    pub fn default_lr(self) -> f64 {
        match self {
            Self::Full => 1e-3,
            _ => 1e-2,
        }
    }

    pub fn has_adapters(self) -> bool {
        matches!(self, Self::LoraEdge | Self::LoraC | Self::LoraLinear)
    }

    /// Whether BN layers should run on batch statistics while fine-tuning.
    /// Methods that leave BN frozen keep its running statistics fixed.
    pub fn trains_batchnorm(self) -> bool {
        matches!(self, Self::Bn | Self::Full)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Model-level record of which method prepared the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeftRecord {
    pub method: Method,
    pub merged: bool,
    pub train_head: bool,
}

/// Per-layer adapter attachment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum AdapterState {
    LoraEdge(LoraEdgeAdapter),
    LoraC(LoraAdapter),
    LoraLinear(LoraAdapter),
}

impl AdapterState {
    pub fn method(&self) -> Method {
        match self {
            Self::LoraEdge(_) => Method::LoraEdge,
            Self::LoraC(_) => Method::LoraC,
            Self::LoraLinear(_) => Method::LoraLinear,
        }
    }

    /// Names of the live adapter slots owned by this attachment.
    pub fn slot_names(&self) -> Vec<String> {
        match self {
            Self::LoraEdge(a) => (1..=a.core_shapes.len()).map(core_slot).collect(),
            Self::LoraC(_) | Self::LoraLinear(_) => vec![lora::A_SLOT.into(), lora::B_SLOT.into()],
        }
    }

    /// The weight update `ΔW`, shaped like the host weight.
    pub fn delta_weight(
        &self,
        layer: usize,
        params: &ParamStore,
        host_shape: &[usize],
    ) -> Result<Tensor> {
        match self {
            Self::LoraEdge(a) => a.delta_weight(layer, params, host_shape),
            Self::LoraC(a) | Self::LoraLinear(a) => a.delta_weight(layer, params, host_shape),
        }
    }

    /// Gradients of the trainable adapter slots given `∂L/∂ΔW`.
    pub fn delta_grads(
        &self,
        layer: usize,
        params: &ParamStore,
        grad_delta: &Tensor,
    ) -> Result<Vec<(SlotKey, Tensor)>> {
        match self {
            Self::LoraEdge(a) => a.delta_grads(layer, params, grad_delta),
            Self::LoraC(a) | Self::LoraLinear(a) => a.delta_grads(layer, params, grad_delta),
        }
    }

    pub fn any_trainable(&self, layer: usize, params: &ParamStore) -> bool {
        self.slot_names().into_iter().any(|n| {
            params
                .get(&SlotKey::new(layer, n))
                .is_some_and(|p| p.trainable)
        })
    }
}

pub(crate) fn fetch<'a>(params: &'a ParamStore, layer: usize, name: &str) -> Result<&'a Tensor> {
    params
        .get(&SlotKey::new(layer, name))
        .map(|p| &p.value)
        .ok_or_else(|| Error::Adapter(format!("missing adapter slot layer{layer}.{name}")))
}

pub(crate) fn adapter_param(value: Tensor, trainable: bool) -> crate::nn::Param {
    crate::nn::Param {
        value,
        trainable,
        role: SlotRole::Adapter,
    }
}

/// Error unless the model is still unprepared.
pub(crate) fn ensure_fresh(m: &Model) -> Result<()> {
    if let Some(r) = m.peft() {
        return Err(Error::Adapter(format!(
            "model is already prepared for {}{}",
            r.method,
            if r.merged { " (merged)" } else { "" }
        )));
    }
    Ok(())
}

/// Freeze everything, then unfreeze the classifier head when requested.
pub(crate) fn freeze_with_head(m: &mut Model, train_head: bool) -> Result<()> {
    m.freeze_all();
    if train_head {
        let head = m
            .head_layer()
            .ok_or_else(|| Error::Adapter("model has no dense head to train".into()))?;
        m.set_trainable(&SlotKey::new(head, WEIGHT), true)?;
        m.set_trainable(&SlotKey::new(head, BIAS), true)?;
    }
    Ok(())
}

/// Fold every adapter into its host weight and drop the adapter slots.
///
/// Afterwards the model has the original layer list and slot shapes; the
/// record is kept with `merged = true` so a second merge is rejected.
pub fn merge_adapters(m: &mut Model) -> Result<()> {
    let record = m
        .peft()
        .cloned()
        .ok_or_else(|| Error::Adapter("no adapters attached".into()))?;
    if record.merged {
        return Err(Error::Adapter("adapters already merged".into()));
    }
    if !record.method.has_adapters() {
        return Err(Error::Adapter(format!(
            "{} has no adapters to merge",
            record.method
        )));
    }
    let adapters = m.adapters().clone();
    let mut merged_weights = Vec::with_capacity(adapters.len());
    for (&layer, adapter) in &adapters {
        let key = SlotKey::new(layer, WEIGHT);
        let w = &m.params()[&key].value;
        let delta = adapter.delta_weight(layer, m.params(), w.shape())?;
        merged_weights.push((key, w.add(&delta)?));
    }
    let params = m.params_mut();
    for (key, w) in merged_weights {
        params.get_mut(&key).expect("host weight exists").value = w;
    }
    params.retain(|_, p| !matches!(p.role, SlotRole::Adapter | SlotRole::AdapterInit));
    m.adapters_mut().clear();
    m.set_peft(Some(PeftRecord {
        merged: true,
        ..record
    }));
    Ok(())
}

/// [`merge_adapters`] restricted to LoRA-Edge models.
pub fn merge_lora_edge(m: &mut Model) -> Result<()> {
    match m.peft() {
        Some(r) if r.method == Method::LoraEdge => merge_adapters(m),
        Some(r) => Err(Error::Adapter(format!(
            "model is prepared for {}, not lora-edge",
            r.method
        ))),
        None => Err(Error::Adapter("no LoRA-Edge adapters attached".into())),
    }
}
