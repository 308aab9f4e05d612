//! Source/target fixture: synthetic source data, a pretrained backbone, and a
//! shifted target domain.

use super::config::{
    DataConfig, ExperimentConfig, FinetuneConfig, PretrainConfig, SweepConfig, TargetConfig,
};
use super::data::{gen_synthetic, split_indices, WindowDataset};
use super::shift::{apply_shift, ShiftSpec};
use super::train::{evaluate, pretrain, seeded, STREAM_INIT, STREAM_SPLIT};
use crate::error::Result;
use crate::nn::{Backbone, Model};

/// Offset added to the experiment seed when drawing target windows, so the
/// target never reuses source samples.
const TARGET_SEED_OFFSET: u64 = 1_000_003;

/// Calibrated desk-scale setup: six classes of 3-axis windows, a 2D toy
/// backbone, and a 30° rotation of the sensor frame as the domain shift.
pub fn fixture_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 7,
        backbone: Backbone::MobileNetToy,
        data: DataConfig {
            classes: 6,
            channels: 3,
            length: 64,
            per_class: 60,
        },
        target: TargetConfig {
            per_class: 60,
            shift: ShiftSpec::rotation_z(30.0),
        },
        pretrain: PretrainConfig::default(),
        finetune: FinetuneConfig::default(),
        sweep: SweepConfig::default(),
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub config: ExperimentConfig,
    pub source_train: WindowDataset,
    pub source_test: WindowDataset,
    /// Target windows before the shift.
    pub target_clean: WindowDataset,
    pub target: WindowDataset,
    pub pretrained: Model,
    pub pretrain_loss: Vec<f64>,
}

impl Fixture {
    /// Macro-F1 of the pretrained model on the i.i.d. source test split.
    pub fn source_f1(&self) -> Result<f64> {
        Ok(evaluate(&self.pretrained, &self.source_test)?.macro_f1)
    }

    /// Zero-shot macro-F1 on target windows without and with the shift.
    pub fn shift_drop(&self) -> Result<(f64, f64)> {
        Ok((
            evaluate(&self.pretrained, &self.target_clean)?.macro_f1,
            evaluate(&self.pretrained, &self.target)?.macro_f1,
        ))
    }
}

/// Freshly initialized backbone for `[channels, length]` windows.
pub fn init_model(
    backbone: Backbone,
    channels: usize,
    length: usize,
    classes: usize,
    seed: u64,
) -> Result<Model> {
    backbone.build(channels, length, classes, &mut seeded(seed, STREAM_INIT))
}

/// Generate data and pretrain the backbone described by `cfg`.
pub fn build_fixture(cfg: &ExperimentConfig) -> Result<Fixture> {
    let d = &cfg.data;
    let source = gen_synthetic(d.classes, d.channels, d.length, d.per_class, cfg.seed)?;
    let (train_idx, test_idx) = split_indices(
        &source,
        cfg.finetune.train_fraction,
        cfg.seed ^ STREAM_SPLIT,
    )?;
    let source_train = source.subset(&train_idx)?;
    let source_test = source.subset(&test_idx)?;
    let target_clean = gen_synthetic(
        d.classes,
        d.channels,
        d.length,
        cfg.target.per_class,
        cfg.seed.wrapping_add(TARGET_SEED_OFFSET),
    )?;
    let target = apply_shift(&target_clean, &cfg.target.shift)?;
    let mut model = init_model(cfg.backbone, d.channels, d.length, d.classes, cfg.seed)?;
    let pretrain_loss = pretrain(&mut model, &source_train, &cfg.pretrain, cfg.seed)?;
    Ok(Fixture {
        config: cfg.clone(),
        source_train,
        source_test,
        target_clean,
        target,
        pretrained: model,
        pretrain_loss,
    })
}
