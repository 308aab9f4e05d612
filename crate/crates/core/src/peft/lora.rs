//! Matrix LoRA baselines: LoRA-C on flattened conv kernels and plain LoRA
//! on dense layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    adapter_param, ensure_fresh, fetch, freeze_with_head, AdapterState, Method, PeftRecord,
};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Model, ParamStore, SlotKey, WEIGHT};
use crate::tensor::Tensor;

pub(crate) const A_SLOT: &str = "lora_a";
pub(crate) const B_SLOT: &str = "lora_b";

/// How the LoRA-C rank argument maps to the inner dimension `r'` of
/// `ΔW = B·A`, with `A ∈ R^{r'×(k·C_in)}` and `B ∈ R^{(k·C_out)×r'}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoraCRank {
    /// `r' = r`: `r·k·(C_out + C_in)` trainables.
    Effective(usize),
    /// `r' = k·r`: `r·k²·(C_out + C_in)` trainables.
    KernelScaled(usize),
}

impl LoraCRank {
    pub fn inner(self, kernel: usize) -> usize {
        match self {
            Self::Effective(r) => r,
            Self::KernelScaled(r) => kernel * r,
        }
    }

    fn base(self) -> usize {
        match self {
            Self::Effective(r) | Self::KernelScaled(r) => r,
        }
    }
}

/// LoRA-C trainables for a `[C_out, C_in, k, k]` kernel.
pub fn lora_c_param_count(c_out: usize, c_in: usize, kernel: usize, rank: LoraCRank) -> usize {
    rank.inner(kernel) * kernel * (c_out + c_in)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// Inner dimension of `B·A`.
    pub rank: usize,
    pub a_shape: Vec<usize>,
    pub b_shape: Vec<usize>,
    pub sigma2: f64,
}

impl LoraAdapter {
    pub(crate) fn delta_weight(
        &self,
        layer: usize,
        params: &ParamStore,
        host_shape: &[usize],
    ) -> Result<Tensor> {
        let a = fetch(params, layer, A_SLOT)?;
        let b = fetch(params, layer, B_SLOT)?;
        b.matmul(a)?.into_reshaped(host_shape)
    }

    pub(crate) fn delta_grads(
        &self,
        layer: usize,
        params: &ParamStore,
        grad_delta: &Tensor,
    ) -> Result<Vec<(SlotKey, Tensor)>> {
        let a = fetch(params, layer, A_SLOT)?;
        let b = fetch(params, layer, B_SLOT)?;
        let gm = grad_delta.reshape(&[b.shape()[0], a.shape()[1]])?;
        let trainable = |name: &str| {
            params
                .get(&SlotKey::new(layer, name))
                .is_some_and(|p| p.trainable)
        };
        let mut out = Vec::new();
        if trainable(A_SLOT) {
            out.push((SlotKey::new(layer, A_SLOT), b.transpose()?.matmul(&gm)?));
        }
        if trainable(B_SLOT) {
            out.push((SlotKey::new(layer, B_SLOT), gm.matmul(&a.transpose()?)?));
        }
        Ok(out)
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 <= 0.0 || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid LoRA init variance {sigma2}"
        )));
    }
    Ok(())
}

fn attach<R: Rng + ?Sized>(
    m: &mut Model,
    targets: Vec<(usize, usize, usize, usize)>,
    sigma2: f64,
    method: Method,
    train_head: bool,
    rng: &mut R,
) -> Result<()> {
    let mut slots = Vec::new();
    let mut adapters = Vec::new();
    for (layer, rows, cols, rank) in targets {
        let a = Tensor::randn(&[rank, cols], sigma2.sqrt(), rng)?;
        let b = Tensor::zeros(&[rows, rank])?;
        let state = LoraAdapter {
            rank,
            a_shape: a.shape().to_vec(),
            b_shape: b.shape().to_vec(),
            sigma2,
        };
        slots.push((SlotKey::new(layer, A_SLOT), adapter_param(a, true)));
        slots.push((SlotKey::new(layer, B_SLOT), adapter_param(b, true)));
        adapters.push((
            layer,
            match method {
                Method::LoraC => AdapterState::LoraC(state),
                _ => AdapterState::LoraLinear(state),
            },
        ));
    }
    freeze_with_head(m, train_head)?;
    m.params_mut().extend(slots);
    m.adapters_mut().extend(adapters);
    m.set_peft(Some(PeftRecord {
        method,
        merged: false,
        train_head,
    }));
    Ok(())
}

/// LoRA-C on every Conv2D layer: `B = 0`, `A ~ N(0, sigma2)`.
pub fn attach_lora_c<R: Rng + ?Sized>(
    m: &mut Model,
    rank: LoraCRank,
    sigma2: f64,
    train_head: bool,
    rng: &mut R,
) -> Result<()> {
    ensure_fresh(m)?;
    check_sigma2(sigma2)?;
    if rank.base() == 0 {
        return Err(Error::InvalidArgument(
            "LoRA rank must be at least 1".into(),
        ));
    }
    if m.layers()
        .iter()
        .any(|l| matches!(l, LayerSpec::Conv1d { .. }))
    {
        return Err(Error::Adapter(
            "LoRA-C applies to Conv2D layers only; model has Conv1D layers".into(),
        ));
    }
    let targets: Vec<_> = m
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match *l {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                i,
                kernel * out_channels,
                kernel * in_channels,
                rank.inner(kernel),
            )),
            _ => None,
        })
        .collect();
    if targets.is_empty() {
        return Err(Error::Adapter("model has no Conv2D layers".into()));
    }
    attach(m, targets, sigma2, Method::LoraC, train_head, rng)
}

/// Plain LoRA (`h = W₀x + BAx`) on every dense layer.
pub fn attach_lora_linear<R: Rng + ?Sized>(
    m: &mut Model,
    rank: usize,
    sigma2: f64,
    rng: &mut R,
) -> Result<()> {
    ensure_fresh(m)?;
    check_sigma2(sigma2)?;
    if rank == 0 {
        return Err(Error::InvalidArgument(
            "LoRA rank must be at least 1".into(),
        ));
    }
    let targets: Vec<_> = m
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let w = m.params().get(&SlotKey::new(i, WEIGHT))?;
            matches!(l, LayerSpec::Dense { .. })
                .then(|| (i, w.value.shape()[0], w.value.shape()[1], rank))
        })
        .collect();
    if targets.is_empty() {
        return Err(Error::Adapter("model has no dense layers".into()));
    }
    attach(m, targets, sigma2, Method::LoraLinear, false, rng)
}
