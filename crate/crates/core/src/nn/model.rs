use std::collections::BTreeMap;

use rand::Rng;

use super::layer::LayerSpec;
use super::{
    Param, ParamStore, SlotKey, SlotRole, BETA, BIAS, GAMMA, RUNNING_MEAN, RUNNING_VAR, WEIGHT,
};
use crate::error::{shape_err, Error, Result};
use crate::peft::{AdapterState, PeftRecord};
use crate::tensor::{conv_forward, conv_grad_input, conv_grad_weight, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Batch-norm behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; nothing is mutated.
    Eval,
}

pub type Gradients = BTreeMap<SlotKey, Tensor>;

#[derive(Debug, Clone)]
enum LayerCache {
    Conv {
        x: Tensor,
        delta: Option<Tensor>,
    },
    Bn {
        x_hat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        y: Tensor,
    },
    MaxPool {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    Gap {
        in_shape: Vec<usize>,
    },
    Dense {
        x: Tensor,
        delta: Option<Tensor>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    SkipSave,
    SkipAdd,
}

/// Layer output, its cache, and running-stat slots to write back.
type BnOutput = (Tensor, LayerCache, Vec<(SlotKey, Tensor)>);

/// Activations recorded by [`Model::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    generation: u64,
    logits_shape: Vec<usize>,
}

impl ForwardCache {
    pub fn mode_used_batch_stats(&self) -> bool {
        self.layers.iter().any(|c| {
            matches!(
                c,
                LayerCache::Bn {
                    batch_stats: true,
                    ..
                }
            )
        })
    }
}

/// Sequential CNN with a parameter registry, freeze flags, and optional
/// adapters on its conv/dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: ParamStore,
    adapters: BTreeMap<usize, AdapterState>,
    peft: Option<PeftRecord>,
    generation: u64,
}

impl Model {
    /// Build a model with He-normal conv/dense weights, zero biases, and
    /// identity batch norms. Every backbone slot starts trainable.
    pub fn new<R: Rng + ?Sized>(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        rng: &mut R,
    ) -> Result<Self> {
        check_chain(&input_shape, &layers)?;
        let mut params = ParamStore::new();
        for (i, layer) in layers.iter().enumerate() {
            if let Some(shape) = layer.weight_shape() {
                let fan_in: usize = shape[1..].iter().product();
                let w = Tensor::randn(&shape, (2.0 / fan_in as f64).sqrt(), rng)?;
                params.insert(SlotKey::new(i, WEIGHT), backbone(w));
                if layer.has_bias() {
                    params.insert(SlotKey::new(i, BIAS), backbone(Tensor::zeros(&shape[..1])?));
                }
            }
            if let LayerSpec::BatchNorm { channels } = *layer {
                params.insert(
                    SlotKey::new(i, GAMMA),
                    backbone(Tensor::filled(&[channels], 1.0)?),
                );
                params.insert(SlotKey::new(i, BETA), backbone(Tensor::zeros(&[channels])?));
                params.insert(
                    SlotKey::new(i, RUNNING_MEAN),
                    buffer(Tensor::zeros(&[channels])?),
                );
                params.insert(
                    SlotKey::new(i, RUNNING_VAR),
                    buffer(Tensor::filled(&[channels], 1.0)?),
                );
            }
        }
        Ok(Self {
            input_shape,
            layers,
            params,
            adapters: BTreeMap::new(),
            peft: None,
            generation: 0,
        })
    }

    /// Reassemble a model from stored parts, checking that every layer has
    /// exactly the slots it needs with the right shapes.
    pub fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: ParamStore,
        adapters: BTreeMap<usize, AdapterState>,
        peft: Option<PeftRecord>,
    ) -> Result<Self> {
        check_chain(&input_shape, &layers)?;
        for (i, layer) in layers.iter().enumerate() {
            let mut expect: Vec<(&str, Vec<usize>)> = Vec::new();
            if let Some(shape) = layer.weight_shape() {
                if layer.has_bias() {
                    expect.push((BIAS, shape[..1].to_vec()));
                }
                expect.push((WEIGHT, shape));
            }
            if let LayerSpec::BatchNorm { channels } = *layer {
                for name in [GAMMA, BETA, RUNNING_MEAN, RUNNING_VAR] {
                    expect.push((name, vec![channels]));
                }
            }
            for (name, shape) in expect {
                match params.get(&SlotKey::new(i, name)) {
                    Some(p) if p.value.shape() == shape.as_slice() => {}
                    Some(p) => {
                        return shape_err(format!(
                            "slot layer{i}.{name} has shape {:?}, layer needs {shape:?}",
                            p.value.shape()
                        ))
                    }
                    None => return shape_err(format!("missing slot layer{i}.{name}")),
                }
            }
        }
        for (layer, adapter) in &adapters {
            let host = layers
                .get(*layer)
                .and_then(LayerSpec::weight_shape)
                .ok_or_else(|| {
                    Error::Adapter(format!("adapter on layer {layer} which has no weight"))
                })?;
            adapter.delta_weight(*layer, &params, &host)?;
        }
        if let Some(k) = params.keys().find(|k| k.layer >= layers.len()) {
            return shape_err(format!("slot {k} refers to a missing layer"));
        }
        Ok(Self {
            input_shape,
            layers,
            params,
            adapters,
            peft,
            generation: 0,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn param(&self, layer: usize, name: &str) -> Option<&Param> {
        self.params.get(&SlotKey::new(layer, name))
    }

    pub fn adapters(&self) -> &BTreeMap<usize, AdapterState> {
        &self.adapters
    }

    pub fn peft(&self) -> Option<&PeftRecord> {
        self.peft.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape()[0]
    }

    /// Per-sample output shape of the final layer.
    pub fn output_shape(&self) -> Vec<usize> {
        self.layer_shapes()
            .last()
            .cloned()
            .unwrap_or_else(|| self.input_shape.clone())
    }

    /// Per-sample input shape of every layer, plus the final output shape.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .expect("shape chain validated at construction");
            shapes.push(next);
        }
        shapes
    }

    /// Mutable access to the registry. Invalidates outstanding caches.
    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        self.generation += 1;
        &mut self.params
    }

    pub(crate) fn adapters_mut(&mut self) -> &mut BTreeMap<usize, AdapterState> {
        self.generation += 1;
        &mut self.adapters
    }

    pub(crate) fn set_peft(&mut self, record: Option<PeftRecord>) {
        self.peft = record;
    }

    pub fn set_trainable(&mut self, key: &SlotKey, trainable: bool) -> Result<()> {
        let p = self
            .params
            .get_mut(key)
            .ok_or_else(|| Error::InvalidArgument(format!("no slot {key}")))?;
        if trainable && matches!(p.role, SlotRole::Buffer | SlotRole::AdapterInit) {
            return Err(Error::InvalidArgument(format!(
                "slot {key} cannot be trained"
            )));
        }
        p.trainable = trainable;
        Ok(())
    }

    /// Overwrite one slot's value, keeping its shape, role, and freeze flag.
    pub fn set_param(&mut self, key: &SlotKey, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(key)
            .ok_or_else(|| Error::InvalidArgument(format!("no slot {key}")))?;
        if p.value.shape() != value.shape() {
            return shape_err(format!(
                "slot {key} has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            ));
        }
        p.value = value;
        self.generation += 1;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        for p in self.params.values_mut() {
            p.trainable = false;
        }
    }

    pub fn trainable_keys(&self) -> Vec<SlotKey> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Parameters a full fine-tune would update (backbone slots only).
    pub fn backbone_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.role == SlotRole::Backbone)
            .map(|p| p.value.len())
            .sum()
    }

    /// Multiply-accumulates per sample of the deployed (single-path) network.
    pub fn flops(&self) -> usize {
        let shapes = self.layer_shapes();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, layer)| match layer.weight_shape() {
                Some(w) => {
                    let per_out: usize = w[1..].iter().product();
                    let outs: usize = shapes[i + 1].iter().product();
                    per_out * outs
                }
                None => 0,
            })
            .sum()
    }

    /// The classifier head: the last dense layer.
    pub fn head_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return shape_err(format!(
                "model expects input [batch, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            ));
        }
        Ok(())
    }

    /// Evaluation-mode logits; never mutates the model.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, Mode::Eval)?.0)
    }

    /// Logits plus the cache needed by [`Model::backward`]. In train mode,
    /// batch-norm running statistics are updated.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        let (logits, layers, updates) = self.run(x, mode)?;
        for (key, value) in updates {
            self.params
                .get_mut(&key)
                .expect("running stat slot exists")
                .value = value;
        }
        let cache = ForwardCache {
            layers,
            generation: self.generation,
            logits_shape: logits.shape().to_vec(),
        };
        Ok((logits, cache))
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        x: &Tensor,
        mode: Mode,
    ) -> Result<(Tensor, Vec<LayerCache>, Vec<(SlotKey, Tensor)>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut updates = Vec::new();
        let mut skips: Vec<Tensor> = Vec::new();
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache) = match *layer {
                LayerSpec::Conv1d {
                    stride, padding, ..
                }
                | LayerSpec::Conv2d {
                    stride, padding, ..
                } => {
                    let w = &self.params[&SlotKey::new(i, WEIGHT)].value;
                    let mut y = conv_forward(w, &h, stride, padding)?;
                    let delta = self.adapter_delta(i, w.shape())?;
                    if let Some(d) = &delta {
                        y.add_assign(&conv_forward(d, &h, stride, padding)?)?;
                    }
                    if let Some(b) = self.params.get(&SlotKey::new(i, BIAS)) {
                        add_channel_bias(&mut y, b.value.data());
                    }
                    (y, LayerCache::Conv { x: h, delta })
                }
                LayerSpec::Dense { .. } => {
                    let w = &self.params[&SlotKey::new(i, WEIGHT)].value;
                    let mut y = h.matmul(&w.transpose()?)?;
                    let delta = self.adapter_delta(i, w.shape())?;
                    if let Some(d) = &delta {
                        y.add_assign(&h.matmul(&d.transpose()?)?)?;
                    }
                    add_channel_bias(&mut y, self.params[&SlotKey::new(i, BIAS)].value.data());
                    (y, LayerCache::Dense { x: h, delta })
                }
                LayerSpec::BatchNorm { .. } => {
                    let (y, cache, upd) = self.bn_forward(i, &h, mode)?;
                    updates.extend(upd);
                    (y, cache)
                }
                LayerSpec::Relu => {
                    let y = h.map(|v| if v > 0.0 { v } else { 0.0 });
                    (y.clone(), LayerCache::Relu { y })
                }
                LayerSpec::MaxPool { size } => {
                    let (y, argmax) = maxpool_forward(&h, size)?;
                    (
                        y,
                        LayerCache::MaxPool {
                            argmax,
                            in_shape: h.shape().to_vec(),
                        },
                    )
                }
                LayerSpec::GlobalAvgPool => {
                    let (b, c) = (h.shape()[0], h.shape()[1]);
                    let spatial = h.len() / (b * c);
                    let data: Vec<f64> = h
                        .data()
                        .chunks(spatial)
                        .map(|s| s.iter().sum::<f64>() / spatial as f64)
                        .collect();
                    let in_shape = h.shape().to_vec();
                    (Tensor::new(vec![b, c], data)?, LayerCache::Gap { in_shape })
                }
                LayerSpec::Flatten => {
                    let b = h.shape()[0];
                    let in_shape = h.shape().to_vec();
                    let n = h.len() / b;
                    (h.into_reshaped(&[b, n])?, LayerCache::Flatten { in_shape })
                }
                LayerSpec::SkipSave => {
                    skips.push(h.clone());
                    (h, LayerCache::SkipSave)
                }
                LayerSpec::SkipAdd => {
                    let saved = skips.pop().ok_or_else(|| {
                        Error::Shape(format!("skip-add at layer {i} has no matching skip-save"))
                    })?;
                    let mut y = h;
                    y.add_assign(&saved)?;
                    (y, LayerCache::SkipAdd)
                }
            };
            caches.push(cache);
            h = out;
        }
        Ok((h, caches, updates))
    }

    fn adapter_delta(&self, layer: usize, host_shape: &[usize]) -> Result<Option<Tensor>> {
        match self.adapters.get(&layer) {
            Some(a) => a.delta_weight(layer, &self.params, host_shape).map(Some),
            None => Ok(None),
        }
    }

    fn bn_forward(&self, i: usize, x: &Tensor, mode: Mode) -> Result<BnOutput> {
        let gamma = self.params[&SlotKey::new(i, GAMMA)].value.data();
        let beta = self.params[&SlotKey::new(i, BETA)].value.data();
        let rm = &self.params[&SlotKey::new(i, RUNNING_MEAN)].value;
        let rv = &self.params[&SlotKey::new(i, RUNNING_VAR)].value;
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let spatial = x.len() / (b * c);
        let count = (b * spatial) as f64;
        let xd = x.data();

        let (mean, var, batch_stats) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for n in 0..b {
                        let off = (n * c + ch) * spatial;
                        s += xd[off..off + spatial].iter().sum::<f64>();
                    }
                    mean[ch] = s / count;
                    let mut v = 0.0;
                    for n in 0..b {
                        let off = (n * c + ch) * spatial;
                        v += xd[off..off + spatial]
                            .iter()
                            .map(|t| (t - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                    var[ch] = v / count;
                }
                (mean, var, true)
            }
            Mode::Eval => (rm.data().to_vec(), rv.data().to_vec(), false),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut x_hat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for n in 0..b {
            for ch in 0..c {
                let off = (n * c + ch) * spatial;
                for s in 0..spatial {
                    let xh = (xd[off + s] - mean[ch]) * inv_std[ch];
                    x_hat[off + s] = xh;
                    y[off + s] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        let mut updates = Vec::new();
        if batch_stats {
            let unbias = if count > 1.0 {
                count / (count - 1.0)
            } else {
                1.0
            };
            let new_mean = Tensor::from_fn(&[c], |ch| {
                (1.0 - BN_MOMENTUM) * rm.data()[ch] + BN_MOMENTUM * mean[ch]
            })?;
            let new_var = Tensor::from_fn(&[c], |ch| {
                (1.0 - BN_MOMENTUM) * rv.data()[ch] + BN_MOMENTUM * var[ch] * unbias
            })?;
            updates.push((SlotKey::new(i, RUNNING_MEAN), new_mean));
            updates.push((SlotKey::new(i, RUNNING_VAR), new_var));
        }
        let shape = x.shape().to_vec();
        Ok((
            Tensor::new(shape.clone(), y)?,
            LayerCache::Bn {
                x_hat: Tensor::new(shape, x_hat)?,
                inv_std,
                batch_stats,
            },
            updates,
        ))
    }

    fn trainable(&self, layer: usize, name: &str) -> bool {
        self.params
            .get(&SlotKey::new(layer, name))
            .is_some_and(|p| p.trainable)
    }

    /// Parameter gradients for every trainable slot, given the gradient of
    /// the loss with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache(
                "model parameters or structure changed since the forward pass".into(),
            ));
        }
        if grad_logits.shape() != cache.logits_shape.as_slice() {
            return shape_err(format!(
                "grad_logits shape {:?} does not match logits {:?}",
                grad_logits.shape(),
                cache.logits_shape
            ));
        }
        let mut grads = Gradients::new();
        let mut skip_grads: Vec<Tensor> = Vec::new();
        let mut g = grad_logits.clone();
        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let need_input = i > 0;
            g = match (layer, lc) {
                (
                    LayerSpec::Conv1d {
                        stride, padding, ..
                    }
                    | LayerSpec::Conv2d {
                        stride, padding, ..
                    },
                    LayerCache::Conv { x, delta },
                ) => {
                    let (stride, padding) = (*stride, *padding);
                    let w = &self.params[&SlotKey::new(i, WEIGHT)].value;
                    if self.trainable(i, BIAS) {
                        grads.insert(SlotKey::new(i, BIAS), channel_sums(&g));
                    }
                    let adapter_trainable = self
                        .adapters
                        .get(&i)
                        .is_some_and(|a| a.any_trainable(i, &self.params));
                    if self.trainable(i, WEIGHT) || adapter_trainable {
                        let gw = conv_grad_weight(w.shape(), x, &g, stride, padding)?;
                        if adapter_trainable {
                            let adapter = &self.adapters[&i];
                            grads.extend(adapter.delta_grads(i, &self.params, &gw)?);
                        }
                        if self.trainable(i, WEIGHT) {
                            grads.insert(SlotKey::new(i, WEIGHT), gw);
                        }
                    }
                    if need_input {
                        let mut gx = conv_grad_input(w, x.shape(), &g, stride, padding)?;
                        if let Some(d) = delta {
                            gx.add_assign(&conv_grad_input(d, x.shape(), &g, stride, padding)?)?;
                        }
                        gx
                    } else {
                        g
                    }
                }
                (LayerSpec::Dense { .. }, LayerCache::Dense { x, delta }) => {
                    let w = &self.params[&SlotKey::new(i, WEIGHT)].value;
                    if self.trainable(i, BIAS) {
                        grads.insert(SlotKey::new(i, BIAS), channel_sums(&g));
                    }
                    let adapter_trainable = self
                        .adapters
                        .get(&i)
                        .is_some_and(|a| a.any_trainable(i, &self.params));
                    if self.trainable(i, WEIGHT) || adapter_trainable {
                        let gw = g.transpose()?.matmul(x)?;
                        if adapter_trainable {
                            grads.extend(self.adapters[&i].delta_grads(i, &self.params, &gw)?);
                        }
                        if self.trainable(i, WEIGHT) {
                            grads.insert(SlotKey::new(i, WEIGHT), gw);
                        }
                    }
                    if need_input {
                        let mut gx = g.matmul(w)?;
                        if let Some(d) = delta {
                            gx.add_assign(&g.matmul(d)?)?;
                        }
                        gx
                    } else {
                        g
                    }
                }
                (
                    LayerSpec::BatchNorm { .. },
                    LayerCache::Bn {
                        x_hat,
                        inv_std,
                        batch_stats,
                    },
                ) => self.bn_backward(i, &g, x_hat, inv_std, *batch_stats, &mut grads)?,
                (LayerSpec::Relu, LayerCache::Relu { y }) => {
                    let mut gx = g;
                    for (gv, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                        if yv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    gx
                }
                (LayerSpec::MaxPool { .. }, LayerCache::MaxPool { argmax, in_shape }) => {
                    let mut gx = Tensor::zeros(in_shape)?;
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gx.data_mut()[src] += gv;
                    }
                    gx
                }
                (LayerSpec::GlobalAvgPool, LayerCache::Gap { in_shape }) => {
                    let spatial: usize = in_shape[2..].iter().product();
                    let gd = g.data();
                    Tensor::from_fn(in_shape, |idx| gd[idx / spatial] / spatial as f64)?
                }
                (LayerSpec::Flatten, LayerCache::Flatten { in_shape }) => {
                    g.into_reshaped(in_shape)?
                }
                (LayerSpec::SkipAdd, LayerCache::SkipAdd) => {
                    skip_grads.push(g.clone());
                    g
                }
                (LayerSpec::SkipSave, LayerCache::SkipSave) => {
                    let mut gx = g;
                    let extra = skip_grads
                        .pop()
                        .ok_or_else(|| Error::StaleCache("unbalanced skip connections".into()))?;
                    gx.add_assign(&extra)?;
                    gx
                }
                _ => {
                    return Err(Error::StaleCache(format!(
                        "cache entry for layer {i} does not match its kind"
                    )))
                }
            };
        }
        Ok(grads)
    }

    fn bn_backward(
        &self,
        i: usize,
        g: &Tensor,
        x_hat: &Tensor,
        inv_std: &[f64],
        batch_stats: bool,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let gamma = self.params[&SlotKey::new(i, GAMMA)].value.data();
        let (b, c) = (g.shape()[0], g.shape()[1]);
        let spatial = g.len() / (b * c);
        let count = (b * spatial) as f64;
        let gd = g.data();
        let xh = x_hat.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for n in 0..b {
            for ch in 0..c {
                let off = (n * c + ch) * spatial;
                for s in 0..spatial {
                    sum_g[ch] += gd[off + s];
                    sum_gx[ch] += gd[off + s] * xh[off + s];
                }
            }
        }
        if self.trainable(i, GAMMA) {
            grads.insert(
                SlotKey::new(i, GAMMA),
                Tensor::new(vec![c], sum_gx.clone())?,
            );
        }
        if self.trainable(i, BETA) {
            grads.insert(SlotKey::new(i, BETA), Tensor::new(vec![c], sum_g.clone())?);
        }
        let mut gx = vec![0.0; g.len()];
        for n in 0..b {
            for ch in 0..c {
                let off = (n * c + ch) * spatial;
                let k = gamma[ch] * inv_std[ch];
                for s in 0..spatial {
                    gx[off + s] = if batch_stats {
                        k * (gd[off + s] - sum_g[ch] / count - xh[off + s] * sum_gx[ch] / count)
                    } else {
                        k * gd[off + s]
                    };
                }
            }
        }
        Tensor::new(g.shape().to_vec(), gx)
    }
}

fn backbone(value: Tensor) -> Param {
    Param {
        value,
        trainable: true,
        role: SlotRole::Backbone,
    }
}

fn buffer(value: Tensor) -> Param {
    Param {
        value,
        trainable: false,
        role: SlotRole::Buffer,
    }
}

fn check_chain(input_shape: &[usize], layers: &[LayerSpec]) -> Result<()> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return shape_err(format!("invalid model input shape {input_shape:?}"));
    }
    let mut shape = input_shape.to_vec();
    let mut skips: Vec<Vec<usize>> = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        match layer {
            LayerSpec::SkipSave => skips.push(shape.clone()),
            LayerSpec::SkipAdd => match skips.pop() {
                Some(s) if s == shape => {}
                Some(s) => {
                    return shape_err(format!(
                        "skip-add at layer {i}: saved {s:?}, current {shape:?}"
                    ))
                }
                None => {
                    return shape_err(format!("skip-add at layer {i} has no matching skip-save"))
                }
            },
            _ => {}
        }
        shape = layer
            .output_shape(&shape)
            .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.kind_name())))?;
    }
    if !skips.is_empty() {
        return shape_err("unclosed skip-save");
    }
    if shape.len() != 1 {
        return shape_err(format!(
            "model must end in a vector of logits, ends in {shape:?}"
        ));
    }
    Ok(())
}

fn add_channel_bias(y: &mut Tensor, bias: &[f64]) {
    let (b, c) = (y.shape()[0], y.shape()[1]);
    let spatial = y.len() / (b * c);
    for (idx, v) in y.data_mut().iter_mut().enumerate() {
        *v += bias[(idx / spatial) % c];
    }
}

fn channel_sums(g: &Tensor) -> Tensor {
    let (b, c) = (g.shape()[0], g.shape()[1]);
    let spatial = g.len() / (b * c);
    let mut out = vec![0.0; c];
    for (idx, v) in g.data().iter().enumerate() {
        out[(idx / spatial) % c] += v;
    }
    Tensor::new(vec![c], out).expect("channel count is positive")
}

fn maxpool_forward(x: &Tensor, size: usize) -> Result<(Tensor, Vec<usize>)> {
    let last = *x.shape().last().unwrap();
    let out_last = last / size;
    let rows = x.len() / last;
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = out_last;
    let xd = x.data();
    let mut y = Vec::with_capacity(rows * out_last);
    let mut argmax = Vec::with_capacity(rows * out_last);
    for r in 0..rows {
        for o in 0..out_last {
            let start = r * last + o * size;
            let mut best = start;
            for j in start + 1..start + size {
                if xd[j] > xd[best] {
                    best = j;
                }
            }
            y.push(xd[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new(out_shape, y)?, argmax))
}
