//! Pretraining, evaluation, and the fine-tuning loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FinetuneConfig, PretrainConfig};
use super::data::{split_indices, WindowDataset};
use super::metrics::{argmax_rows, macro_f1, Confusion};
use crate::error::{Error, Result};
use crate::nn::{adam_step, softmax_cross_entropy, AdamState, Mode, Model};
use crate::peft::{
    apply_bias_tuning, apply_bn_tuning, apply_full_finetune, attach_lora_c, attach_lora_edge_with,
    attach_lora_linear, param_report, LoraCRank, LoraEdgeOptions, Method, ParamReport,
};

/// Independent RNG stream `stream` under `seed`.
pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SPLIT: u64 = 2;
pub(crate) const STREAM_BATCH: u64 = 3;
pub(crate) const STREAM_ADAPTER: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub macro_f1: f64,
    pub loss: f64,
    pub confusion: Confusion,
}

/// Eval-mode metrics on a whole dataset.
pub fn evaluate(m: &Model, d: &WindowDataset) -> Result<Evaluation> {
    let all: Vec<usize> = (0..d.len()).collect();
    let (x, labels) = d.batch(&all, m.input_shape())?;
    let logits = m.predict(&x)?;
    let (loss, _) = softmax_cross_entropy(&logits, &labels)?;
    let confusion = Confusion::from_predictions(&labels, &argmax_rows(&logits), d.class_count)?;
    Ok(Evaluation {
        macro_f1: macro_f1(&confusion),
        loss,
        confusion,
    })
}

fn sample_batch<R: Rng>(pool: &[usize], batch: usize, rng: &mut R) -> Vec<usize> {
    (0..batch)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect()
}

/// One Adam step on a sampled mini-batch; returns the batch loss.
fn train_step(
    m: &mut Model,
    d: &WindowDataset,
    indices: &[usize],
    mode: Mode,
    adam: &mut AdamState,
    lr: f64,
) -> Result<f64> {
    let (x, labels) = d.batch(indices, m.input_shape())?;
    let (logits, cache) = m.forward(&x, mode)?;
    let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
    let grads = m.backward(&cache, &grad)?;
    adam_step(m, &grads, adam, lr)?;
    Ok(loss)
}

/// Supervised training of every trainable slot on `d`, batch-norm in
/// training mode. Returns the per-step losses.
pub fn pretrain(
    m: &mut Model,
    d: &WindowDataset,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if d.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let pool: Vec<usize> = (0..d.len()).collect();
    let mut rng = seeded(seed, STREAM_BATCH);
    let mut adam = AdamState::new();
    (0..cfg.steps)
        .map(|_| {
            let idx = sample_batch(&pool, cfg.batch, &mut rng);
            train_step(m, d, &idx, Mode::Train, &mut adam, cfg.lr)
        })
        .collect()
}

/// Attach or unfreeze according to `cfg.method`. LoRA-C takes
/// `cfg.lora_rank` as its inner rank directly.
pub fn prepare(m: &mut Model, cfg: &FinetuneConfig, seed: u64) -> Result<()> {
    let mut rng = seeded(seed, STREAM_ADAPTER);
    match cfg.method {
        Method::LoraEdge => {
            let opts = LoraEdgeOptions::new(cfg.rank).train_head(cfg.train_head);
            attach_lora_edge_with::<ChaCha8Rng>(m, &opts, None)
        }
        Method::LoraC => attach_lora_c(
            m,
            LoraCRank::Effective(cfg.lora_rank),
            cfg.lora_sigma2,
            cfg.train_head,
            &mut rng,
        ),
        Method::LoraLinear => attach_lora_linear(m, cfg.lora_rank, cfg.lora_sigma2, &mut rng),
        Method::Bias => apply_bias_tuning(m, cfg.train_head),
        Method::Bn => apply_bn_tuning(m, cfg.train_head),
        Method::Full => apply_full_finetune(m),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub macro_f1: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub adam_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Mini-batch loss after each step.
    pub train_loss: Vec<f64>,
    /// Held-out metrics at step 0, every `eval_interval` steps, and the
    /// final step.
    pub evals: Vec<EvalPoint>,
    /// Held-out confusion matrix after the final step.
    pub confusion: Confusion,
    pub params: ParamReport,
}

impl RunResult {
    pub fn zero_shot_f1(&self) -> f64 {
        self.evals[0].macro_f1
    }

    pub fn final_f1(&self) -> f64 {
        self.evals
            .last()
            .expect("step 0 is always evaluated")
            .macro_f1
    }

    /// F1 at `step`, if that step was evaluated.
    pub fn f1_at(&self, step: usize) -> Option<f64> {
        self.evals
            .iter()
            .find(|e| e.step == step)
            .map(|e| e.macro_f1)
    }
}

/// First evaluated step whose macro-F1 reaches `target`.
pub fn steps_to_threshold(r: &RunResult, target: f64) -> Option<usize> {
    r.evals
        .iter()
        .find(|e| e.macro_f1 >= target)
        .map(|e| e.step)
}

/// Fine-tune a prepared model on the training part of `target`, evaluating
/// on the held-out part. The split and mini-batch draws depend only on
/// `seed`, so every method sees the same data.
pub fn finetune(
    m: &mut Model,
    target: &WindowDataset,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<RunResult> {
    cfg.validate()?;
    let record = m
        .peft()
        .cloned()
        .ok_or_else(|| Error::Adapter("no fine-tuning method attached".into()))?;
    if record.merged {
        return Err(Error::Adapter("cannot fine-tune a merged model".into()));
    }
    if record.method != cfg.method {
        return Err(Error::Config(format!(
            "model is prepared for {} but the run asks for {}",
            record.method, cfg.method
        )));
    }
    let (train_idx, test_idx) = split_indices(target, cfg.train_fraction, seed ^ 0x5eed)?;
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "target set of {} windows is too small to split",
            target.len()
        )));
    }
    let test = target.subset(&test_idx)?;
    let mode = if record.method.trains_batchnorm() {
        Mode::Train
    } else {
        Mode::Eval
    };
    let lr = cfg.lr();
    let mut rng = seeded(seed, STREAM_BATCH);
    let mut adam = AdamState::new();

    let eval_at = |m: &Model, step: usize| -> Result<(EvalPoint, Confusion)> {
        let e = evaluate(m, &test)?;
        Ok((
            EvalPoint {
                step,
                macro_f1: e.macro_f1,
                loss: e.loss,
            },
            e.confusion,
        ))
    };
    let (first, mut confusion) = eval_at(m, 0)?;
    let mut evals = vec![first];
    let mut train_loss = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let idx = sample_batch(&train_idx, cfg.batch, &mut rng);
        train_loss.push(train_step(m, target, &idx, mode, &mut adam, lr)?);
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let (p, c) = eval_at(m, step)?;
            evals.push(p);
            confusion = c;
        }
    }
    Ok(RunResult {
        method: record.method,
        seed,
        adam_steps: adam.step() as usize,
        batch_size: cfg.batch,
        lr,
        train_size: train_idx.len(),
        test_size: test_idx.len(),
        train_loss,
        evals,
        confusion,
        params: param_report(m),
    })
}
