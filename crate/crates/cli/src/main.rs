//! `lora-edge`: generate data, pretrain toy backbones, fine-tune with
//! LoRA-Edge or a baseline, merge, evaluate, and run the ablation and
//! init-sensitivity experiments.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lora_edge::harness::{
    ablation_csv, apply_shift, build_fixture, confusion_csv, evaluate, finetune, gen_synthetic,
    init_model, load_dataset, prepare, pretrain, run_ablation_cores, run_csv, run_init_sweep,
    save_dataset, split_indices, sweep_csv, ExperimentConfig, FinetuneConfig, PretrainConfig,
    ShiftSpec,
};
use lora_edge::nn::{load_model, save_model, Backbone};
use lora_edge::numfmt::fmt_sig;
use lora_edge::peft::{merge_adapters, param_report, Method};

#[derive(Parser)]
#[command(
    name = "lora-edge",
    version,
    about = "Tensor-train adapters for convolutional sensor models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-channel window dataset.
    GenData {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        channels: usize,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Domain shift applied before writing, e.g. `rotation:30`.
        #[arg(long, default_value = "none")]
        shift: ShiftSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a toy backbone from scratch on 80% of a dataset.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        backbone: Backbone,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach a fine-tuning method to a pretrained bundle and train it.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "none")]
        shift: ShiftSpec,
        #[arg(long, default_value = "lora-edge")]
        method: Method,
        /// TT rank for lora-edge (default 2), inner rank for lora-c and
        /// lora-linear (default 1).
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        /// Defaults to 0.01, or 0.001 for full fine-tuning.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        eval_interval: usize,
        /// Also train the classifier head.
        #[arg(long)]
        train_head: bool,
        #[arg(long, default_value_t = 1e-3)]
        lora_sigma2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fold adapters into the host weights.
    Merge {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Macro-F1 and confusion matrix of a bundle on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "none")]
        shift: ShiftSpec,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Trainable-parameter report of a bundle.
    Paramcount {
        #[arg(long)]
        model: PathBuf,
    },
    /// Core-selection ablation on the configured fixture.
    AblateCores {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// TT-SVD against random core initialization over an (lr, σ²) grid.
    InitSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Write to `path`, or stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData {
            classes,
            channels,
            length,
            per_class,
            seed,
            shift,
            out,
        } => {
            let d = apply_shift(
                &gen_synthetic(classes, channels, length, per_class, seed)?,
                &shift,
            )?;
            save_dataset(&d, &out)?;
            println!(
                "wrote {} windows of {:?} to {}",
                d.len(),
                d.window_shape(),
                out.display()
            );
        }
        Command::Pretrain {
            data,
            backbone,
            steps,
            lr,
            batch,
            seed,
            out,
        } => {
            let d = load_dataset(&data)?;
            let (train_idx, test_idx) = split_indices(&d, 0.8, seed)?;
            let (train, test) = (d.subset(&train_idx)?, d.subset(&test_idx)?);
            let window = d.window_shape();
            if window.len() != 2 {
                bail!("pretraining expects [channels, length] windows, got {window:?}");
            }
            let mut m = init_model(backbone, window[0], window[1], d.class_count, seed)?;
            let losses = pretrain(&mut m, &train, &PretrainConfig { steps, lr, batch }, seed)?;
            let e = evaluate(&m, &test)?;
            println!(
                "final loss {}  held-out macro-F1 {}",
                losses.last().map_or("-".into(), |l| fmt_sig(*l, 6)),
                fmt_sig(e.macro_f1, 6)
            );
            save_model(&m, &out)?;
        }
        Command::Finetune {
            model,
            data,
            shift,
            method,
            rank,
            steps,
            lr,
            batch,
            eval_interval,
            train_head,
            lora_sigma2,
            seed,
            out,
            report,
        } => {
            let mut m = load_model(&model)?;
            let d = apply_shift(&load_dataset(&data)?, &shift)?;
            let defaults = FinetuneConfig::default();
            let cfg = FinetuneConfig {
                method,
                rank: rank.unwrap_or(defaults.rank),
                lora_rank: rank.unwrap_or(defaults.lora_rank),
                steps,
                batch,
                lr,
                eval_interval,
                train_head,
                lora_sigma2,
                ..defaults
            };
            prepare(&mut m, &cfg, seed)?;
            let r = finetune(&mut m, &d, &cfg, seed)?;
            println!(
                "{}: macro-F1 {} -> {} in {} steps; {} trainable ({}% of {})",
                r.method,
                fmt_sig(r.zero_shot_f1(), 6),
                fmt_sig(r.final_f1(), 6),
                r.adam_steps,
                r.params.trainable,
                r.params.percent_display(),
                r.params.full_ft
            );
            save_model(&m, &out)?;
            if let Some(p) = report {
                emit(Some(&p), &run_csv(&r))?;
            }
        }
        Command::Merge { model, out } => {
            let mut m = load_model(&model)?;
            merge_adapters(&mut m)?;
            save_model(&m, &out)?;
            println!("merged into {}", out.display());
        }
        Command::Eval {
            model,
            data,
            shift,
            report,
        } => {
            let m = load_model(&model)?;
            let d = apply_shift(&load_dataset(&data)?, &shift)?;
            let e = evaluate(&m, &d)?;
            emit(report.as_deref(), &confusion_csv(e.macro_f1, &e.confusion))?;
            if report.is_some() {
                println!("macro-F1 {}", fmt_sig(e.macro_f1, 6));
            }
        }
        Command::Paramcount { model } => {
            print!("{}", param_report(&load_model(&model)?));
        }
        Command::AblateCores { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let fx = build_fixture(&cfg)?;
            let runs = run_ablation_cores(&fx, &cfg.finetune, cfg.seed)?;
            emit(out.as_deref(), &ablation_csv(&runs))?;
        }
        Command::InitSweep { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let fx = build_fixture(&cfg)?;
            let s = &cfg.sweep;
            let cells = run_init_sweep(&fx, &cfg.finetune, &s.lrs, &s.sigma2s, &s.seeds)?;
            emit(out.as_deref(), &sweep_csv(&cells))?;
        }
    }
    Ok(())
}
