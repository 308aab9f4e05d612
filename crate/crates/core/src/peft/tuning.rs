use super::{ensure_fresh, freeze_with_head, Method, PeftRecord};
use crate::error::{Error, Result};
use crate::nn::{Model, SlotKey, SlotRole, BETA, BIAS, GAMMA};

fn unfreeze_named(m: &mut Model, names: &[&str]) -> Result<usize> {
    let keys: Vec<SlotKey> = m
        .params()
        .keys()
        .filter(|k| names.contains(&k.name.as_str()))
        .cloned()
        .collect();
    for k in &keys {
        m.set_trainable(k, true)?;
    }
    Ok(keys.len())
}

/// Train only bias vectors (conv and dense).
pub fn apply_bias_tuning(m: &mut Model, train_head: bool) -> Result<()> {
    ensure_fresh(m)?;
    if !m.params().keys().any(|k| k.name == BIAS) {
        return Err(Error::Adapter("model has no bias slots".into()));
    }
    freeze_with_head(m, train_head)?;
    unfreeze_named(m, &[BIAS])?;
    m.set_peft(Some(PeftRecord {
        method: Method::Bias,
        merged: false,
        train_head,
    }));
    Ok(())
}

/// Train only batch-norm scale and shift. Running statistics stay buffers.
pub fn apply_bn_tuning(m: &mut Model, train_head: bool) -> Result<()> {
    ensure_fresh(m)?;
    if !m.params().keys().any(|k| k.name == GAMMA) {
        return Err(Error::Adapter("model has no batch-norm layers".into()));
    }
    freeze_with_head(m, train_head)?;
    unfreeze_named(m, &[GAMMA, BETA])?;
    m.set_peft(Some(PeftRecord {
        method: Method::Bn,
        merged: false,
        train_head,
    }));
    Ok(())
}

/// Train every backbone slot.
pub fn apply_full_finetune(m: &mut Model) -> Result<()> {
    ensure_fresh(m)?;
    let keys: Vec<SlotKey> = m
        .params()
        .iter()
        .filter(|(_, p)| p.role == SlotRole::Backbone)
        .map(|(k, _)| k.clone())
        .collect();
    m.freeze_all();
    for k in &keys {
        m.set_trainable(k, true)?;
    }
    m.set_peft(Some(PeftRecord {
        method: Method::Full,
        merged: false,
        train_head: true,
    }));
    Ok(())
}
