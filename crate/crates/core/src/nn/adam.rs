use std::collections::BTreeMap;

use super::model::{Gradients, Model};
use super::SlotKey;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Adam moments for each trainable slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<SlotKey, (Tensor, Tensor)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, key: &SlotKey) -> Option<&(Tensor, Tensor)> {
        self.moments.get(key)
    }
}

/// One bias-corrected Adam update of every trainable slot.
///
/// `grads` must name exactly the trainable slots: a gradient for a frozen
/// slot means the backward pass leaked through a freeze mask and is an error.
pub fn adam_step(
    model: &mut Model,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (key, g) in grads {
        let p = model
            .params()
            .get(key)
            .ok_or_else(|| Error::GradientMismatch(format!("gradient for unknown slot {key}")))?;
        if !p.trainable {
            return Err(Error::FrozenGradient(key.to_string()));
        }
        if g.shape() != p.value.shape() {
            return shape_err(format!(
                "gradient for {key} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.value.shape()
            ));
        }
    }
    if let Some(missing) = model
        .trainable_keys()
        .into_iter()
        .find(|k| !grads.contains_key(k))
    {
        return Err(Error::GradientMismatch(format!(
            "no gradient for trainable slot {missing}"
        )));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let params = model.params_mut();
    for (key, g) in grads {
        let (m, v) = state.moments.entry(key.clone()).or_insert_with(|| {
            let z = Tensor::zeros(g.shape()).expect("gradient shape is valid");
            (z.clone(), z)
        });
        let p = params.get_mut(key).expect("checked above");
        let pd = p.value.data_mut();
        for (((pv, &gv), mv), vv) in pd
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
