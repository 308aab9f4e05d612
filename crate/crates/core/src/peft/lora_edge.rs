//! LoRA-Edge: TT-SVD cores of a frozen conv weight attached as a parallel
//! path, with the output-side core zeroed and trained alone.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    adapter_param, ensure_fresh, fetch, freeze_with_head, AdapterState, Method, PeftRecord,
};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Model, Param, ParamStore, SlotKey, SlotRole, WEIGHT};
use crate::tensor::{conv_forward, conv_grad_weight, Tensor};
use crate::tt::{tt_core_grads, tt_reconstruct, tt_svd, TtCores};

/// Slot name of core `k` (1-based).
pub fn core_slot(k: usize) -> String {
    format!("tt_core_{k}")
}

/// Slot holding core `k`'s value from before it was zeroed.
pub fn init_slot(k: usize) -> String {
    format!("tt_core_{k}_init")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoreInit {
    /// Cores from TT-SVD of the frozen weight.
    TtSvd,
    /// Cores drawn i.i.d. from N(0, sigma2), shaped as TT-SVD would shape them.
    Random { sigma2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraEdgeAdapter {
    pub r_target: usize,
    pub ranks: Vec<usize>,
    pub core_shapes: Vec<Vec<usize>>,
    /// 1-based indices of trainable cores.
    pub trainable_cores: BTreeSet<usize>,
    /// 1-based index of the core zeroed at attachment, if any.
    pub zeroed_core: Option<usize>,
    pub init: CoreInit,
}

impl LoraEdgeAdapter {
    pub fn cores(&self, layer: usize, params: &ParamStore) -> Result<TtCores> {
        let cores = (1..=self.core_shapes.len())
            .map(|k| fetch(params, layer, &core_slot(k)).cloned())
            .collect::<Result<Vec<_>>>()?;
        TtCores::new(cores)
    }

    pub(crate) fn delta_weight(
        &self,
        layer: usize,
        params: &ParamStore,
        host_shape: &[usize],
    ) -> Result<Tensor> {
        tt_reconstruct(&self.cores(layer, params)?, host_shape)
    }

    pub(crate) fn delta_grads(
        &self,
        layer: usize,
        params: &ParamStore,
        grad_delta: &Tensor,
    ) -> Result<Vec<(SlotKey, Tensor)>> {
        let which: Vec<usize> = (0..self.core_shapes.len())
            .filter(|k| {
                params
                    .get(&SlotKey::new(layer, core_slot(k + 1)))
                    .is_some_and(|p| p.trainable)
            })
            .collect();
        let cores = self.cores(layer, params)?;
        let grads = tt_core_grads(&cores, grad_delta, &which)?;
        Ok(grads
            .into_iter()
            .enumerate()
            .filter_map(|(k, g)| g.map(|g| (SlotKey::new(layer, core_slot(k + 1)), g)))
            .collect())
    }
}

/// Attachment settings. [`LoraEdgeOptions::new`] gives the standard
/// configuration: core 1 zeroed and the only trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraEdgeOptions {
    pub r_target: usize,
    pub trainable_cores: BTreeSet<usize>,
    pub zero_init_core: Option<usize>,
    pub init: CoreInit,
    pub train_head: bool,
}

impl LoraEdgeOptions {
    pub fn new(r_target: usize) -> Self {
        Self {
            r_target,
            trainable_cores: BTreeSet::from([1]),
            zero_init_core: Some(1),
            init: CoreInit::TtSvd,
            train_head: false,
        }
    }

    pub fn trainable(mut self, cores: impl IntoIterator<Item = usize>) -> Self {
        self.trainable_cores = cores.into_iter().collect();
        self
    }

    pub fn zero_init(mut self, core: Option<usize>) -> Self {
        self.zero_init_core = core;
        self
    }

    pub fn init(mut self, init: CoreInit) -> Self {
        self.init = init;
        self
    }

    pub fn train_head(mut self, yes: bool) -> Self {
        self.train_head = yes;
        self
    }
}

/// Attach standard LoRA-Edge adapters (TT-SVD init, core 1 zeroed) to every
/// conv layer, training only `trainable_cores`.
pub fn attach_lora_edge(m: &mut Model, r_target: usize, trainable_cores: &[usize]) -> Result<()> {
    let opts = LoraEdgeOptions::new(r_target).trainable(trainable_cores.iter().copied());
    attach_lora_edge_with::<rand::rngs::ThreadRng>(m, &opts, None)
}

/// Attach LoRA-Edge adapters with explicit options. `rng` is required only
/// for [`CoreInit::Random`].
pub fn attach_lora_edge_with<R: Rng>(
    m: &mut Model,
    opts: &LoraEdgeOptions,
    mut rng: Option<&mut R>,
) -> Result<()> {
    ensure_fresh(m)?;
    if opts.r_target == 0 {
        return Err(Error::InvalidArgument("TT rank must be at least 1".into()));
    }
    let convs: Vec<usize> = m
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_conv())
        .map(|(i, _)| i)
        .collect();
    if convs.is_empty() {
        return Err(Error::Adapter("model has no convolution layers".into()));
    }
    if opts.trainable_cores.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one core must be trainable".into(),
        ));
    }

    let mut new_slots: Vec<(SlotKey, Param)> = Vec::new();
    let mut adapters = Vec::with_capacity(convs.len());
    for &layer in &convs {
        let w = &m.params()[&SlotKey::new(layer, WEIGHT)].value;
        let d = w.order();
        if let Some(&bad) = opts
            .trainable_cores
            .iter()
            .chain(opts.zero_init_core.iter())
            .find(|&&k| k == 0 || k > d)
        {
            return Err(Error::InvalidArgument(format!(
                "core index {bad} out of range for the {d}-core chain of layer {layer}"
            )));
        }
        let svd = tt_svd(w, opts.r_target)?;
        let cores = match opts.init {
            CoreInit::TtSvd => svd,
            CoreInit::Random { sigma2 } => {
                let rng = rng.as_deref_mut().ok_or_else(|| {
                    Error::InvalidArgument("random core init needs an rng".into())
                })?;
                if sigma2 <= 0.0 || !sigma2.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "invalid init variance {sigma2}"
                    )));
                }
                let cores = svd
                    .shapes()
                    .iter()
                    .map(|s| Tensor::randn(s, sigma2.sqrt(), rng))
                    .collect::<Result<Vec<_>>>()?;
                TtCores::new(cores)?
            }
        };
        for (k0, core) in cores.cores().iter().enumerate() {
            let k = k0 + 1;
            let trainable = opts.trainable_cores.contains(&k);
            let live = if opts.zero_init_core == Some(k) {
                new_slots.push((
                    SlotKey::new(layer, init_slot(k)),
                    Param {
                        value: core.clone(),
                        trainable: false,
                        role: SlotRole::AdapterInit,
                    },
                ));
                Tensor::zeros(core.shape())?
            } else {
                core.clone()
            };
            new_slots.push((
                SlotKey::new(layer, core_slot(k)),
                adapter_param(live, trainable),
            ));
        }
        adapters.push((
            layer,
            AdapterState::LoraEdge(LoraEdgeAdapter {
                r_target: opts.r_target,
                ranks: cores.ranks(),
                core_shapes: cores.shapes(),
                trainable_cores: opts.trainable_cores.clone(),
                zeroed_core: opts.zero_init_core,
                init: opts.init,
            }),
        ));
    }

    freeze_with_head(m, opts.train_head)?;
    m.params_mut().extend(new_slots);
    m.adapters_mut().extend(adapters);
    m.set_peft(Some(PeftRecord {
        method: Method::LoraEdge,
        merged: false,
        train_head: opts.train_head,
    }));
    Ok(())
}

fn lora_edge_at(m: &Model, layer: usize) -> Result<&LoraEdgeAdapter> {
    match m.adapters().get(&layer) {
        Some(AdapterState::LoraEdge(a)) => Ok(a),
        Some(other) => Err(Error::Adapter(format!(
            "layer {layer} carries a {} adapter",
            other.method()
        ))),
        None if m.peft().is_some_and(|r| r.merged) => Err(Error::Adapter(format!(
            "layer {layer}: adapter already merged"
        ))),
        None => Err(Error::Adapter(format!(
            "layer {layer} has no LoRA-Edge adapter"
        ))),
    }
}

/// Two-path output `conv(W, x) + conv(ΔW, x)` of conv layer `layer`, without
/// bias. Both paths share the host's stride and padding.
pub fn lora_edge_forward(m: &Model, layer: usize, x: &Tensor) -> Result<Tensor> {
    let adapter = lora_edge_at(m, layer)?;
    let (stride, padding) = m.layers()[layer]
        .conv_params()
        .expect("adapters sit on conv layers");
    let w = &m.params()[&SlotKey::new(layer, WEIGHT)].value;
    let delta = adapter.delta_weight(layer, m.params(), w.shape())?;
    let mut y = conv_forward(w, x, stride, padding)?;
    y.add_assign(&conv_forward(&delta, x, stride, padding)?)?;
    Ok(y)
}

/// `∂L/∂G⁽¹⁾` for conv layer `layer` given the layer input and `∂L/∂Y`.
pub fn lora_edge_grad_core1(
    m: &Model,
    layer: usize,
    x: &Tensor,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let adapter = lora_edge_at(m, layer)?;
    let key = SlotKey::new(layer, core_slot(1));
    if !m.params()[&key].trainable {
        return Err(Error::Adapter(format!("{key} is frozen")));
    }
    let (stride, padding) = m.layers()[layer]
        .conv_params()
        .expect("adapters sit on conv layers");
    let w = &m.params()[&SlotKey::new(layer, WEIGHT)].value;
    let grad_delta = conv_grad_weight(w.shape(), x, grad_out, stride, padding)?;
    let cores = adapter.cores(layer, m.params())?;
    let mut grads = tt_core_grads(&cores, &grad_delta, &[0])?;
    Ok(grads.swap_remove(0).expect("requested core 1"))
}

/// Overwrite core `k` (1-based) of the adapter on `layer`.
pub fn set_core(m: &mut Model, layer: usize, k: usize, value: Tensor) -> Result<()> {
    let adapter = lora_edge_at(m, layer)?;
    let expected = adapter
        .core_shapes
        .get(k.wrapping_sub(1))
        .ok_or_else(|| Error::InvalidArgument(format!("no core {k} on layer {layer}")))?;
    if value.shape() != expected.as_slice() {
        return shape_err(format!(
            "core {k} must have shape {expected:?}, got {:?}",
            value.shape()
        ));
    }
    m.params_mut()
        .get_mut(&SlotKey::new(layer, core_slot(k)))
        .expect("core slot exists")
        .value = value;
    Ok(())
}

/// Put every zeroed core back to its pre-zeroing value.
pub fn restore_zeroed_cores(m: &mut Model) -> Result<()> {
    let restores: Vec<(usize, usize)> = m
        .adapters()
        .iter()
        .filter_map(|(&layer, a)| match a {
            AdapterState::LoraEdge(e) => e.zeroed_core.map(|k| (layer, k)),
            _ => None,
        })
        .collect();
    for (layer, k) in restores {
        let init = fetch(m.params(), layer, &init_slot(k))?.clone();
        set_core(m, layer, k, init)?;
    }
    Ok(())
}
