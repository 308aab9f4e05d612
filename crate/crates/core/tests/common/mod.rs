//! Shared helpers for the integration suites: finite-difference gradient
//! checks and small per-layer-kind models.
#![allow(dead_code)]

use lora_edge::nn::{
    softmax_cross_entropy, LayerSpec, Mode, Model, SlotKey, RUNNING_MEAN, RUNNING_VAR,
};
use lora_edge::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Mean cross-entropy of the model on `(x, labels)` in `mode`, computed on
/// a copy so running statistics of `m` are untouched.
pub fn loss(m: &Model, x: &Tensor, labels: &[usize], mode: Mode) -> f64 {
    let mut m = m.clone();
    let (logits, _) = m.forward(x, mode).unwrap();
    softmax_cross_entropy(&logits, labels).unwrap().0
}

/// Worst per-slot relative error between backward-pass gradients and central
/// differences, over every trainable slot. Returns `(slot, error)`.
pub fn fd_check_model(m: &Model, x: &Tensor, labels: &[usize], mode: Mode) -> (SlotKey, f64) {
    let mut work = m.clone();
    let (logits, cache) = work.forward(x, mode).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, labels).unwrap();
    let grads = work.backward(&cache, &g).unwrap();
    assert_eq!(
        grads.keys().cloned().collect::<Vec<_>>(),
        m.trainable_keys(),
        "gradients must cover exactly the trainable slots"
    );
    let mut worst = (SlotKey::new(0, ""), 0.0);
    for key in m.trainable_keys() {
        let base = m.params()[&key].value.clone();
        let mut numeric = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut probe = m.clone();
            let mut v = base.clone();
            v.data_mut()[i] = base.data()[i] + FD_STEP;
            probe.set_param(&key, v.clone()).unwrap();
            let up = loss(&probe, x, labels, mode);
            v.data_mut()[i] = base.data()[i] - FD_STEP;
            probe.set_param(&key, v).unwrap();
            let down = loss(&probe, x, labels, mode);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let e = rel_err(grads[&key].data(), &numeric);
        if e >= worst.1 {
            worst = (key.clone(), e);
        }
    }
    worst
}

/// A small model exercising one layer kind, with the input shape it takes
/// and the forward mode the check runs in.
pub struct KindCase {
    pub kind: &'static str,
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub mode: Mode,
}

pub fn kind_cases() -> Vec<KindCase> {
    use LayerSpec::*;
    let conv2d_s2 = Conv2d {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride: 2,
        padding: 0,
        bias: true,
    };
    vec![
        KindCase {
            kind: "conv1d",
            input: vec![2, 6],
            layers: vec![
                LayerSpec::conv1d(2, 3, 3),
                Flatten,
                Dense {
                    in_features: 18,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
        KindCase {
            kind: "conv2d",
            input: vec![2, 4, 4],
            layers: vec![
                LayerSpec::conv2d(2, 3, 3),
                Flatten,
                Dense {
                    in_features: 48,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
        KindCase {
            kind: "conv2d-stride2",
            input: vec![2, 5, 5],
            layers: vec![
                conv2d_s2,
                Flatten,
                Dense {
                    in_features: 12,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
        KindCase {
            kind: "batchnorm-train",
            input: vec![2, 3, 4],
            // A bias feeding train-mode batch norm has an identically zero
            // gradient, which a relative check cannot score.
            layers: vec![
                Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    bias: false,
                },
                BatchNorm { channels: 3 },
                Flatten,
                Dense {
                    in_features: 36,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
        KindCase {
            kind: "batchnorm-eval",
            input: vec![2, 6],
            layers: vec![
                LayerSpec::conv1d(2, 3, 3),
                BatchNorm { channels: 3 },
                Flatten,
                Dense {
                    in_features: 18,
                    out_features: 3,
                },
            ],
            mode: Mode::Eval,
        },
        KindCase {
            kind: "relu",
            input: vec![2, 6],
            layers: vec![
                LayerSpec::conv1d(2, 3, 3),
                Relu,
                Flatten,
                Dense {
                    in_features: 18,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
        KindCase {
            kind: "max-pool",
            input: vec![2, 3, 6],
            layers: vec![
                LayerSpec::conv2d(2, 3, 3),
                MaxPool { size: 2 },
                Flatten,
                Dense {
                    in_features: 27,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
        KindCase {
            kind: "global-avg-pool",
            input: vec![2, 6],
            layers: vec![
                LayerSpec::conv1d(2, 4, 3),
                GlobalAvgPool,
                Dense {
                    in_features: 4,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
        KindCase {
            kind: "dense",
            input: vec![5],
            layers: vec![
                Dense {
                    in_features: 5,
                    out_features: 4,
                },
                Relu,
                Dense {
                    in_features: 4,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
        KindCase {
            kind: "flatten",
            input: vec![2, 3, 3],
            layers: vec![
                Flatten,
                Dense {
                    in_features: 18,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
        KindCase {
            kind: "skip",
            input: vec![2, 6],
            layers: vec![
                LayerSpec::conv1d(2, 3, 3),
                SkipSave,
                LayerSpec::conv1d(3, 3, 3),
                Relu,
                SkipAdd,
                Flatten,
                Dense {
                    in_features: 18,
                    out_features: 3,
                },
            ],
            mode: Mode::Train,
        },
    ]
}

/// Build `case` with random weights (and random running statistics, so eval
/// batch norm is not the identity), plus a batch and labels.
pub fn kind_instance(case: &KindCase, seed: u64) -> (Model, Tensor, Vec<usize>) {
    let mut r = rng(seed);
    let mut m = Model::new(case.input.clone(), case.layers.clone(), &mut r).unwrap();
    let keys: Vec<SlotKey> = m.params().keys().cloned().collect();
    for key in keys {
        let shape = m.params()[&key].value.shape().to_vec();
        let v = match key.name.as_str() {
            RUNNING_VAR => Tensor::from_fn(&shape, |_| r.random_range(0.5..2.0)).unwrap(),
            RUNNING_MEAN => Tensor::randn(&shape, 0.5, &mut r).unwrap(),
            _ => Tensor::randn(&shape, 0.7, &mut r).unwrap(),
        };
        m.set_param(&key, v).unwrap();
    }
    let batch = 4;
    let mut shape = vec![batch];
    shape.extend_from_slice(&case.input);
    let x = Tensor::randn(&shape, 1.0, &mut r).unwrap();
    let labels = (0..batch).map(|_| r.random_range(0..3)).collect();
    (m, x, labels)
}

/// Desk-size variant of the calibrated fixture for quick harness checks.
pub fn small_fixture_config() -> lora_edge::harness::ExperimentConfig {
    let mut cfg = lora_edge::harness::fixture_config();
    cfg.data.per_class = 20;
    cfg.data.length = 32;
    cfg.target.per_class = 20;
    cfg.pretrain.steps = 40;
    cfg.pretrain.batch = 32;
    cfg.finetune.steps = 6;
    cfg.finetune.batch = 16;
    cfg
}

/// True when some entry of `key` sits within one FD step of a kink (ReLU or
/// max-pool switching), shown by the forward and backward one-sided
/// differences disagreeing with each other. A wrong analytic gradient does
/// not trigger this; only a non-differentiable probe point does.
pub fn kink_within_step(
    m: &Model,
    x: &Tensor,
    labels: &[usize],
    mode: Mode,
    key: &SlotKey,
) -> bool {
    let base = m.params()[key].value.clone();
    let l0 = loss(m, x, labels, mode);
    (0..base.len()).any(|i| {
        let mut probe = m.clone();
        let mut v = base.clone();
        v.data_mut()[i] = base.data()[i] + FD_STEP;
        probe.set_param(key, v.clone()).unwrap();
        let fwd = (loss(&probe, x, labels, mode) - l0) / FD_STEP;
        v.data_mut()[i] = base.data()[i] - FD_STEP;
        probe.set_param(key, v).unwrap();
        let bwd = (l0 - loss(&probe, x, labels, mode)) / FD_STEP;
        (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs())
    })
}
