//! Soft comparative properties on the calibrated fixture. These depend on
//! fixture difficulty, so a failure here prints a calibration warning and
//! fails only this suite.

use lora_edge::harness::{
    build_fixture, fixture_config, run_ablation_cores, run_comparison, run_init_sweep,
    steps_to_threshold, Fixture,
};
use lora_edge::peft::Method;

/// Fraction of the full fine-tuning final F1 used as the speed threshold.
const SPEED_FRACTION: f64 = 0.85;

fn soft(ok: bool, label: &str, detail: String, failures: &mut Vec<String>) {
    if ok {
        println!("[PASS] {label}: {detail}");
    } else {
        println!("[WARN] {label}: {detail} (fixture may need recalibration)");
        failures.push(format!("{label}: {detail}"));
    }
}

fn method_comparison(fx: &Fixture, failures: &mut Vec<String>) {
    let methods = [Method::LoraEdge, Method::Bias, Method::Bn, Method::Full];
    let runs = run_comparison(fx, &fx.config.finetune, &methods, 0).unwrap();
    let (edge, bias, bn, full) = (&runs[0], &runs[1], &runs[2], &runs[3]);
    soft(
        edge.final_f1() >= bias.final_f1() && edge.final_f1() >= bn.final_f1(),
        "lora-edge final F1 >= bias and bn",
        format!(
            "{:.4} vs bias {:.4}, bn {:.4}",
            edge.final_f1(),
            bias.final_f1(),
            bn.final_f1()
        ),
        failures,
    );

    let target = SPEED_FRACTION * full.final_f1();
    let edge_steps = steps_to_threshold(edge, target);
    let bias_steps = steps_to_threshold(bias, target);
    let faster = match (edge_steps, bias_steps) {
        (Some(e), Some(b)) => e < b,
        (Some(_), None) => true,
        _ => false,
    };
    soft(
        faster,
        "lora-edge reaches 85% of full fine-tuning before bias",
        format!("target {target:.4}: lora-edge {edge_steps:?} steps, bias {bias_steps:?} steps"),
        failures,
    );
}

fn ablation(fx: &Fixture, failures: &mut Vec<String>) {
    let runs = run_ablation_cores(fx, &fx.config.finetune, 0).unwrap();
    let all = runs.iter().find(|r| r.arm.name == "All").unwrap();
    let all_step1 = all.result.f1_at(1).unwrap();
    let zero_init: Vec<(String, f64)> = runs
        .iter()
        .filter(|r| r.arm.zero_init == Some(1))
        .map(|r| (r.arm.name.clone(), r.result.f1_at(1).unwrap()))
        .collect();
    soft(
        zero_init.iter().all(|(_, f)| all_step1 < *f),
        "All arm starts below the zero-init arms",
        format!("All step-1 {all_step1:.4} vs {zero_init:?}"),
        failures,
    );
    let g1 = runs.iter().find(|r| r.arm.name == "G1 only").unwrap();
    assert!(g1.result.params.trainable < all.result.params.trainable);
}

fn init_sweep(fx: &Fixture, failures: &mut Vec<String>) {
    let sweep = &fx.config.sweep;
    let cells = run_init_sweep(fx, &fx.config.finetune, &sweep.lrs, &sweep.sigma2s, &[0]).unwrap();
    let mean = cells.iter().map(|c| c.delta_f1_pct).sum::<f64>() / cells.len() as f64;
    soft(
        mean > 0.0,
        "mean delta F1 of TT-SVD over random init is positive",
        format!("{mean:.3} points over {} cells", cells.len()),
        failures,
    );
}

#[test]
fn comparative_properties() {
    let fx = build_fixture(&fixture_config()).unwrap();
    let mut failures = Vec::new();
    method_comparison(&fx, &mut failures);
    ablation(&fx, &mut failures);
    init_sweep(&fx, &mut failures);
    assert!(
        failures.is_empty(),
        "soft properties failed:\n{}",
        failures.join("\n")
    );
}
