//! Print the calibrated fixture's headline numbers: source accuracy, the
//! zero-shot drop under shift, and a 50-step comparison of every method.

use std::time::Instant;

use lora_edge::harness::{
    build_fixture, fixture_config, run_ablation_cores, run_comparison, run_init_sweep,
    steps_to_threshold,
};
use lora_edge::numfmt::fmt_sig;
use lora_edge::peft::Method;

fn main() -> lora_edge::Result<()> {
    let cfg = fixture_config();
    let t = Instant::now();
    let fx = build_fixture(&cfg)?;
    println!(
        "pretrain: {:.2}s, final loss {}",
        t.elapsed().as_secs_f64(),
        fmt_sig(*fx.pretrain_loss.last().unwrap_or(&f64::NAN), 4)
    );
    println!("source test macro-F1: {}", fmt_sig(fx.source_f1()?, 4));
    let (clean, shifted) = fx.shift_drop()?;
    println!(
        "target zero-shot macro-F1: clean {} shifted {}",
        fmt_sig(clean, 4),
        fmt_sig(shifted, 4)
    );
    let t = Instant::now();
    let runs = run_comparison(&fx, &cfg.finetune, &Method::ALL, cfg.seed)?;
    println!("comparison: {:.2}s", t.elapsed().as_secs_f64());
    let full = runs
        .iter()
        .find(|r| r.method == Method::Full)
        .map(|r| r.final_f1())
        .unwrap_or(1.0);
    for r in &runs {
        println!(
            "{:<12} zero-shot {}  final {}  best {}  trainable {} ({}%)  85%-of-full at {:?}",
            r.method.to_string(),
            fmt_sig(r.zero_shot_f1(), 4),
            fmt_sig(r.final_f1(), 4),
            fmt_sig(r.evals.iter().map(|e| e.macro_f1).fold(0.0, f64::max), 4),
            r.params.trainable,
            r.params.percent_display(),
            steps_to_threshold(r, 0.85 * full),
        );
    }
    let t = Instant::now();
    let arms = run_ablation_cores(&fx, &cfg.finetune, cfg.seed)?;
    println!("ablation: {:.2}s", t.elapsed().as_secs_f64());
    for a in &arms {
        println!(
            "{:<20} step1 {}  final {}  trainable {}",
            a.arm.name,
            fmt_sig(a.result.f1_at(1).unwrap_or(f64::NAN), 4),
            fmt_sig(a.result.final_f1(), 4),
            a.result.params.trainable
        );
    }
    let t = Instant::now();
    let s = &cfg.sweep;
    let cells = run_init_sweep(&fx, &cfg.finetune, &s.lrs, &s.sigma2s, &s.seeds)?;
    println!("init sweep: {:.2}s", t.elapsed().as_secs_f64());
    for c in &cells {
        println!(
            "lr {:<8} sigma2 {:<8} dF1 {}%  ttsvd {} random {}",
            fmt_sig(c.lr, 3),
            fmt_sig(c.sigma2, 3),
            fmt_sig(c.delta_f1_pct, 4),
            fmt_sig(c.f1_ttsvd, 4),
            fmt_sig(c.f1_random, 4)
        );
    }
    let mean = cells.iter().map(|c| c.delta_f1_pct).sum::<f64>() / cells.len() as f64;
    println!("mean dF1 {}%", fmt_sig(mean, 4));
    Ok(())
}
