//! End-to-end runs of the `lora-edge` binary on a tiny dataset.

use std::path::Path;
use std::process::{Command, Output};

use lora_edge::nn::BundleManifest;

fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_lora-edge"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "lora-edge {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"
seed = 3
backbone = "calanet-toy"

[data]
classes = 3
channels = 3
length = 16
per_class = 10

[target]
per_class = 10
shift = "rotation:30"

[pretrain]
steps = 10
batch = 16

[finetune]
steps = 3
batch = 8

[sweep]
lrs = [0.01]
sigma2s = [0.001, 0.1]
seeds = [0]
"#;

#[test]
fn pipeline_from_data_to_merged_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (data, base, tuned, merged) = (
        d.join("data"),
        d.join("base"),
        d.join("tuned"),
        d.join("merged"),
    );
    let (report, eval_report) = (d.join("run.csv"), d.join("eval.csv"));

    run(&[
        "gen-data",
        "--classes",
        "3",
        "--channels",
        "3",
        "--length",
        "16",
        "--per-class",
        "10",
        "--seed",
        "1",
        "--out",
        p(&data),
    ]);
    assert!(data.join("meta.json").exists());
    run(&[
        "pretrain",
        "--data",
        p(&data),
        "--backbone",
        "mobilenet-toy",
        "--steps",
        "5",
        "--seed",
        "2",
        "--out",
        p(&base),
    ]);
    run(&[
        "finetune",
        "--model",
        p(&base),
        "--data",
        p(&data),
        "--shift",
        "rotation:30",
        "--method",
        "lora-edge",
        "--rank",
        "2",
        "--steps",
        "4",
        "--batch",
        "8",
        "--lr",
        "0.01",
        "--seed",
        "0",
        "--out",
        p(&tuned),
        "--report",
        p(&report),
    ]);
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().next(), Some("step,macro_f1,loss,train_loss"));
    assert_eq!(csv.lines().count(), 1 + 5);

    let count = String::from_utf8(run(&["paramcount", "--model", p(&tuned)]).stdout).unwrap();
    assert!(count.contains("lora-edge"), "{count}");

    run(&["merge", "--model", p(&tuned), "--out", p(&merged)]);
    let manifest = BundleManifest::read(&merged).unwrap();
    assert!(manifest.adapters.is_empty());
    assert!(manifest.peft.is_some_and(|r| r.merged));

    run(&[
        "eval",
        "--model",
        p(&merged),
        "--data",
        p(&data),
        "--shift",
        "rotation:30",
        "--report",
        p(&eval_report),
    ]);
    let eval = std::fs::read_to_string(&eval_report).unwrap();
    assert!(eval.starts_with("macro_f1\n"));
    assert_eq!(eval.lines().count(), 3 + 3);

    // Merging twice is refused.
    let again = Command::new(env!("CARGO_BIN_EXE_lora-edge"))
        .args(["merge", "--model", p(&merged), "--out", p(&d.join("twice"))])
        .output()
        .unwrap();
    assert!(!again.status.success());
}

#[test]
fn experiment_commands_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let ablation = dir.path().join("ablation.csv");
    run(&["ablate-cores", "--config", p(&cfg), "--out", p(&ablation)]);
    let csv = std::fs::read_to_string(&ablation).unwrap();
    // calanet-toy has 3-core chains: 5 arms, 4 evaluations each
    assert_eq!(csv.lines().count(), 1 + 5 * 4);

    let sweep = String::from_utf8(run(&["init-sweep", "--config", p(&cfg)]).stdout).unwrap();
    assert!(sweep.starts_with("lr,sigma2,delta_f1_pct,f1_ttsvd,f1_random,runs\n"));
    assert_eq!(sweep.lines().count(), 3);
}

#[test]
fn bad_input_is_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_lora-edge"))
        .args([
            "finetune",
            "--model",
            "/nonexistent",
            "--data",
            "/nonexistent",
            "--out",
            "/tmp/x",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    let out = Command::new(env!("CARGO_BIN_EXE_lora-edge"))
        .args([
            "gen-data",
            "--classes",
            "3",
            "--channels",
            "3",
            "--length",
            "8",
            "--per-class",
            "2",
            "--shift",
            "spin:3",
            "--out",
            "/tmp/y",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
