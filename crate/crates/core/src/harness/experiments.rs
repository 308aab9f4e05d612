//! Multi-run experiments: method comparison, core-selection ablation, and
//! the initialization sweep.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::FinetuneConfig;
use super::fixture::Fixture;
use super::train::{finetune, prepare, seeded, RunResult, STREAM_ADAPTER};
use crate::error::{Error, Result};
use crate::nn::{Model, SlotKey, WEIGHT};
use crate::numfmt::fmt_sig;
use crate::peft::{attach_lora_edge_with, CoreInit, LoraEdgeOptions, Method};

/// Fine-tune a copy of the pretrained model with `cfg.method`.
pub fn run_method(fx: &Fixture, cfg: &FinetuneConfig, seed: u64) -> Result<RunResult> {
    let mut m = fx.pretrained.clone();
    prepare(&mut m, cfg, seed)?;
    finetune(&mut m, &fx.target, cfg, seed)
}

/// Every method in `methods` under the same budget, split, and batches.
pub fn run_comparison(
    fx: &Fixture,
    base: &FinetuneConfig,
    methods: &[Method],
    seed: u64,
) -> Result<Vec<RunResult>> {
    methods
        .par_iter()
        .map(|&method| {
            let cfg = FinetuneConfig {
                method,
                lr: None,
                ..base.clone()
            };
            run_method(fx, &cfg, seed)
        })
        .collect()
}

pub fn comparison_csv(runs: &[RunResult]) -> String {
    let mut out = String::from("method,step,macro_f1,loss,trainable,percent\n");
    for r in runs {
        for e in &r.evals {
            out += &format!(
                "{},{},{},{},{},{}\n",
                r.method,
                e.step,
                fmt_sig(e.macro_f1, 6),
                fmt_sig(e.loss, 6),
                r.params.trainable,
                fmt_sig(r.params.percent, 6)
            );
        }
    }
    out
}

/// One core-selection variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationArm {
    pub name: String,
    pub trainable_cores: BTreeSet<usize>,
    pub zero_init: Option<usize>,
}

/// Arms for a `d`-core chain: each core alone (zero-initialized so its path
/// starts silent), all cores without zero-init, and all cores with core 1
/// zero-initialized.
pub fn ablation_arms(d: usize) -> Vec<AblationArm> {
    let mut arms: Vec<AblationArm> = (1..=d)
        .map(|k| AblationArm {
            name: format!("G{k} only"),
            trainable_cores: BTreeSet::from([k]),
            zero_init: Some(k),
        })
        .collect();
    arms.push(AblationArm {
        name: "All".into(),
        trainable_cores: (1..=d).collect(),
        zero_init: None,
    });
    arms.push(AblationArm {
        name: "All & zero-init G1".into(),
        trainable_cores: (1..=d).collect(),
        zero_init: Some(1),
    });
    arms
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub arm: AblationArm,
    pub result: RunResult,
}

/// Core-order of the conv weights in `m` (3 for Conv1D, 4 for Conv2D).
fn conv_order(m: &Model) -> Result<usize> {
    let orders: BTreeSet<usize> = m
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_conv())
        .map(|(i, _)| m.params()[&SlotKey::new(i, WEIGHT)].value.order())
        .collect();
    match orders.len() {
        1 => Ok(*orders.first().expect("one order")),
        0 => Err(Error::Adapter("model has no convolution layers".into())),
        _ => Err(Error::Adapter(
            "ablation needs conv layers of a single order".into(),
        )),
    }
}

/// All ablation arms on the fixture with identical seed, split, and batches.
pub fn run_ablation_cores(
    fx: &Fixture,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<Vec<AblationRun>> {
    let cfg = FinetuneConfig {
        method: Method::LoraEdge,
        ..cfg.clone()
    };
    let arms = ablation_arms(conv_order(&fx.pretrained)?);
    arms.into_par_iter()
        .map(|arm| {
            let mut m = fx.pretrained.clone();
            let opts = LoraEdgeOptions::new(cfg.rank)
                .trainable(arm.trainable_cores.iter().copied())
                .zero_init(arm.zero_init)
                .train_head(cfg.train_head);
            attach_lora_edge_with::<ChaCha8Rng>(&mut m, &opts, None)?;
            let result = finetune(&mut m, &fx.target, &cfg, seed)?;
            Ok(AblationRun { arm, result })
        })
        .collect()
}

pub fn ablation_csv(runs: &[AblationRun]) -> String {
    let mut out = String::from("arm,step,macro_f1,loss,trainable\n");
    let steps: BTreeSet<usize> = runs
        .iter()
        .flat_map(|r| r.result.evals.iter().map(|e| e.step))
        .collect();
    for step in steps {
        for r in runs {
            if let Some(e) = r.result.evals.iter().find(|e| e.step == step) {
                out += &format!(
                    "{},{},{},{},{}\n",
                    r.arm.name,
                    step,
                    fmt_sig(e.macro_f1, 6),
                    fmt_sig(e.loss, 6),
                    r.result.params.trainable
                );
            }
        }
    }
    out
}

/// One `(lr, σ²)` cell of the init sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub lr: f64,
    pub sigma2: f64,
    /// Mean over seeds of `F1(TT-SVD init) − F1(random init)`, in
    /// percentage points.
    pub delta_f1_pct: f64,
    pub f1_ttsvd: f64,
    pub f1_random: f64,
    pub runs: usize,
}

fn lora_edge_run(fx: &Fixture, cfg: &FinetuneConfig, init: CoreInit, seed: u64) -> Result<f64> {
    let mut m = fx.pretrained.clone();
    let opts = LoraEdgeOptions::new(cfg.rank)
        .init(init)
        .train_head(cfg.train_head);
    let mut rng = seeded(seed, STREAM_ADAPTER);
    attach_lora_edge_with(&mut m, &opts, Some(&mut rng))?;
    Ok(finetune(&mut m, &fx.target, cfg, seed)?.final_f1())
}

/// For every `(lr, σ²)` pair: TT-SVD-initialized LoRA-Edge against the same
/// adapter with cores drawn from `N(0, σ²)`, core 1 zeroed in both, final
/// macro-F1 averaged over `seeds`.
pub fn run_init_sweep(
    fx: &Fixture,
    cfg: &FinetuneConfig,
    lrs: &[f64],
    sigma2s: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepCell>> {
    if lrs.is_empty() || sigma2s.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "init sweep needs non-empty lr, σ², and seed lists".into(),
        ));
    }
    let base = |lr: f64| FinetuneConfig {
        method: Method::LoraEdge,
        lr: Some(lr),
        ..cfg.clone()
    };
    // The TT-SVD arm does not depend on σ².
    let ttsvd: Vec<Vec<f64>> = lrs
        .par_iter()
        .map(|&lr| {
            seeds
                .iter()
                .map(|&s| lora_edge_run(fx, &base(lr), CoreInit::TtSvd, s))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, f64, f64)> = lrs
        .iter()
        .enumerate()
        .flat_map(|(i, &lr)| sigma2s.iter().map(move |&s2| (i, lr, s2)))
        .collect();
    cells
        .into_par_iter()
        .map(|(i, lr, sigma2)| {
            let random = seeds
                .iter()
                .map(|&s| lora_edge_run(fx, &base(lr), CoreInit::Random { sigma2 }, s))
                .collect::<Result<Vec<_>>>()?;
            let n = seeds.len() as f64;
            let f1_ttsvd = ttsvd[i].iter().sum::<f64>() / n;
            let f1_random = random.iter().sum::<f64>() / n;
            Ok(SweepCell {
                lr,
                sigma2,
                delta_f1_pct: 100.0 * (f1_ttsvd - f1_random),
                f1_ttsvd,
                f1_random,
                runs: seeds.len(),
            })
        })
        .collect()
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("lr,sigma2,delta_f1_pct,f1_ttsvd,f1_random,runs\n");
    for c in cells {
        out += &format!(
            "{},{},{},{},{},{}\n",
            fmt_sig(c.lr, 6),
            fmt_sig(c.sigma2, 6),
            fmt_sig(c.delta_f1_pct, 6),
            fmt_sig(c.f1_ttsvd, 6),
            fmt_sig(c.f1_random, 6),
            c.runs
        );
    }
    out
}

/// Per-evaluation CSV of a single run.
pub fn run_csv(r: &RunResult) -> String {
    let mut out = String::from("step,macro_f1,loss,train_loss\n");
    for e in &r.evals {
        let train = match e.step {
            0 => String::new(),
            s => fmt_sig(r.train_loss[s - 1], 6),
        };
        out += &format!(
            "{},{},{},{}\n",
            e.step,
            fmt_sig(e.macro_f1, 6),
            fmt_sig(e.loss, 6),
            train
        );
    }
    out
}

/// Macro-F1 line followed by the confusion matrix (rows true, columns
/// predicted).
pub fn confusion_csv(macro_f1: f64, c: &super::metrics::Confusion) -> String {
    let mut out = format!("macro_f1\n{}\n", fmt_sig(macro_f1, 6));
    let header: Vec<String> = (0..c.classes()).map(|j| format!("pred_{j}")).collect();
    out += &format!("true,{}\n", header.join(","));
    for (i, row) in c.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        out += &format!("{i},{}\n", cells.join(","));
    }
    out
}
