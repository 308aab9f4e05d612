//! Acceptance gate: one PASS/FAIL line per criterion. Comparative properties
//! that depend on fixture difficulty are soft and live in `comparison.rs`;
//! only their hard parts are checked here.

mod common;

use std::time::Instant;

use common::{fd_check_model, kind_cases, kind_instance, kink_within_step, rng};
use lora_edge::harness::{
    ablation_csv, build_fixture, evaluate, finetune, fixture_config, prepare, run_ablation_cores,
    run_comparison, run_csv, run_init_sweep, split_indices, sweep_csv, FinetuneConfig, Fixture,
};
use lora_edge::nn::{
    save_model, Backbone, BundleManifest, LayerSpec, Mode, Model, SlotKey, BETA, BIAS, GAMMA,
    RUNNING_MEAN, RUNNING_VAR,
};
use lora_edge::peft::{
    attach_lora_c, attach_lora_edge, core_slot, merge_adapters, param_report, set_core, LoraCRank,
    Method,
};
use lora_edge::tt::{tt_reconstruct, tt_svd, TtCores};
use lora_edge::Tensor;
use rand::Rng;

const FD_TOL: f64 = 1e-5;
const FD_INSTANCES: u64 = 20;
const MERGE_TOL: f64 = 1e-9;
const TT_EXACT_TOL: f64 = 1e-9;
const TT_RANK1_TOL: f64 = 1e-10;
const PERCENT_TOL: f64 = 0.001;

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn record(&mut self, id: &str, ok: bool, detail: String) {
        println!(
            "[{}] criterion {id}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            self.failures.push(format!("{id}: {detail}"));
        }
    }
}

fn rel_frob(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
}

fn conv64(seed: u64) -> Model {
    Model::new(
        vec![64, 3, 3],
        vec![
            LayerSpec::Conv2d {
                in_channels: 64,
                out_channels: 64,
                kernel: 3,
                stride: 1,
                padding: 1,
                bias: false,
            },
            LayerSpec::GlobalAvgPool,
        ],
        &mut rng(seed),
    )
    .unwrap()
}

fn c1_core_shapes(g: &mut Gate) {
    let w = Tensor::randn(&[64, 64, 3, 3], 1.0, &mut rng(1)).unwrap();
    let t = Instant::now();
    let cores = tt_svd(&w, 2).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let shapes = cores.shapes();
    let want = vec![vec![1, 64, 2], vec![2, 64, 2], vec![2, 3, 2], vec![2, 3, 1]];
    g.record(
        "1",
        shapes == want && secs < 1.0,
        format!("core shapes {shapes:?} in {secs:.3}s"),
    );
}

fn c2_param_counts(g: &mut Gate) {
    let mut edge = conv64(2);
    let mut lora_c = edge.clone();
    attach_lora_edge(&mut edge, 2, &[1]).unwrap();
    attach_lora_c(
        &mut lora_c,
        LoraCRank::Effective(1),
        1e-3,
        false,
        &mut rng(3),
    )
    .unwrap();
    let r = param_report(&edge);
    let c = param_report(&lora_c);
    let ok = r.trainable == 128
        && r.full_ft == 36_864
        && (r.percent - 0.347).abs() <= PERCENT_TOL
        && c.trainable == 384;
    g.record(
        "2",
        ok,
        format!(
            "lora-edge {} of {} ({}%), lora-c {}",
            r.trainable,
            r.full_ft,
            r.percent_display(),
            c.trainable
        ),
    );
}

fn c3_zero_start(g: &mut Gate) {
    let mut ok = true;
    for (i, b) in Backbone::ALL.into_iter().enumerate() {
        let mut m = b.build(3, 32, 6, &mut rng(30 + i as u64)).unwrap();
        let mut shape = vec![100];
        shape.extend_from_slice(m.input_shape());
        let x = Tensor::randn(&shape, 1.0, &mut rng(40 + i as u64)).unwrap();
        let before = m.predict(&x).unwrap();
        attach_lora_edge(&mut m, 2, &[1]).unwrap();
        ok &= m.predict(&x).unwrap().bit_eq(&before);
    }
    g.record(
        "3",
        ok,
        "100 inputs on each backbone, logits bitwise equal after attach".into(),
    );
}

fn c4_merge(g: &mut Gate, fx: &Fixture) {
    let cfg = FinetuneConfig {
        steps: 10,
        ..fx.config.finetune.clone()
    };
    let mut m = fx.pretrained.clone();
    prepare(&mut m, &cfg, 0).unwrap();
    finetune(&mut m, &fx.target, &cfg, 0).unwrap();
    let mut shape = vec![100];
    shape.extend_from_slice(m.input_shape());
    let x = Tensor::randn(&shape, 1.0, &mut rng(4)).unwrap();
    let two_path = m.predict(&x).unwrap();
    merge_adapters(&mut m).unwrap();
    let diff = m.predict(&x).unwrap().sub(&two_path).unwrap().max_abs();
    let dir = tempfile::tempdir().unwrap();
    save_model(&m, dir.path()).unwrap();
    let manifest = BundleManifest::read(dir.path()).unwrap();
    let original: Vec<(SlotKey, Vec<usize>)> = fx
        .pretrained
        .params()
        .iter()
        .map(|(k, p)| (k.clone(), p.value.shape().to_vec()))
        .collect();
    let merged: Vec<(SlotKey, Vec<usize>)> = manifest
        .slots
        .iter()
        .map(|s| (SlotKey::new(s.layer, s.name.clone()), s.shape.clone()))
        .collect();
    let ok = diff <= MERGE_TOL && manifest.adapters.is_empty() && merged == original;
    g.record(
        "4",
        ok,
        format!(
            "max |merged - two-path| = {diff:.3e}, {} adapter records, shapes preserved: {}",
            manifest.adapters.len(),
            merged == original
        ),
    );
}

fn c5_tt_exactness(g: &mut Gate) {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    let mut worst_rank1 = 0.0f64;
    for _ in 0..50 {
        let order = r.random_range(3..=4);
        let sizes: Vec<usize> = (0..order).map(|_| r.random_range(2..=6)).collect();
        let r_t = r.random_range(1..=3);
        let mut ranks = vec![1];
        ranks.extend((1..order).map(|_| r.random_range(1..=r_t)));
        ranks.push(1);
        let cores = TtCores::new(
            (0..order)
                .map(|k| Tensor::randn(&[ranks[k], sizes[k], ranks[k + 1]], 1.0, &mut r).unwrap())
                .collect(),
        )
        .unwrap();
        let w = tt_reconstruct(&cores, &sizes).unwrap();
        let back = tt_reconstruct(&tt_svd(&w, r_t).unwrap(), &sizes).unwrap();
        worst = worst.max(rel_frob(&back, &w));

        let vectors: Vec<Tensor> = sizes
            .iter()
            .map(|&n| Tensor::randn(&[1, n, 1], 1.0, &mut r).unwrap())
            .collect();
        let w1 = tt_reconstruct(&TtCores::new(vectors).unwrap(), &sizes).unwrap();
        let back1 = tt_reconstruct(&tt_svd(&w1, 1).unwrap(), &sizes).unwrap();
        worst_rank1 = worst_rank1.max(rel_frob(&back1, &w1));
    }
    g.record(
        "5",
        worst <= TT_EXACT_TOL && worst_rank1 <= TT_RANK1_TOL,
        format!(
            "50 trials, worst relative error {worst:.3e} (rank <= r_T), {worst_rank1:.3e} (rank 1)"
        ),
    );
}

/// Worst FD error over `FD_INSTANCES` smooth draws from `draw`. A draw whose
/// failing slot is shown to straddle a kink is replaced by the next seed;
/// the number of replaced draws is returned alongside.
fn fd_over_instances(
    seed0: u64,
    draw: impl Fn(u64) -> (Model, Tensor, Vec<usize>, Mode),
) -> (SlotKey, f64, usize) {
    let mut worst = (SlotKey::new(0, ""), 0.0);
    let mut redrawn = 0;
    let mut seed = seed0;
    let mut accepted = 0;
    while accepted < FD_INSTANCES {
        let (m, x, labels, mode) = draw(seed);
        seed += 1;
        let (slot, e) = fd_check_model(&m, &x, &labels, mode);
        if e > FD_TOL && kink_within_step(&m, &x, &labels, mode, &slot) {
            redrawn += 1;
            continue;
        }
        accepted += 1;
        if e >= worst.1 {
            worst = (slot, e);
        }
    }
    (worst.0, worst.1, redrawn)
}

fn c6_gradients(g: &mut Gate) {
    let mut families: Vec<(String, (SlotKey, f64, usize))> = Vec::new();
    families.push((
        "core-1".into(),
        fd_over_instances(600, |seed| {
            let mut r = rng(seed);
            let mut edge = Backbone::MobileNetToy.build(3, 16, 4, &mut r).unwrap();
            attach_lora_edge(&mut edge, 2, &[1]).unwrap();
            for layer in [0, 3, 7] {
                let shape = edge.params()[&SlotKey::new(layer, core_slot(1))]
                    .value
                    .shape()
                    .to_vec();
                set_core(
                    &mut edge,
                    layer,
                    1,
                    Tensor::randn(&shape, 0.3, &mut r).unwrap(),
                )
                .unwrap();
            }
            let x = Tensor::randn(&[3, 1, 3, 16], 1.0, &mut r).unwrap();
            (edge, x, vec![0, 1, 3], Mode::Eval)
        }),
    ));
    families.push((
        "lora-c".into(),
        fd_over_instances(800, |seed| {
            let mut r = rng(seed);
            let mut lora_c = Backbone::MobileNetToy.build(3, 16, 4, &mut r).unwrap();
            attach_lora_c(&mut lora_c, LoraCRank::Effective(1), 1e-2, false, &mut r).unwrap();
            for layer in [0, 3, 7] {
                let key = SlotKey::new(layer, "lora_b");
                let shape = lora_c.params()[&key].value.shape().to_vec();
                lora_c
                    .set_param(&key, Tensor::randn(&shape, 0.3, &mut r).unwrap())
                    .unwrap();
            }
            let x = Tensor::randn(&[3, 1, 3, 16], 1.0, &mut r).unwrap();
            (lora_c, x, vec![2, 0, 1], Mode::Eval)
        }),
    ));
    for case in kind_cases() {
        let mode = case.mode;
        let result = fd_over_instances(1000, |seed| {
            let (m, x, labels) = kind_instance(&case, seed);
            (m, x, labels, mode)
        });
        families.push((case.kind.to_string(), result));
    }
    let (name, (slot, err, _)) = families
        .iter()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("at least one family");
    let redrawn: usize = families.iter().map(|f| f.1 .2).sum();
    g.record(
        "6",
        *err <= FD_TOL,
        format!(
            "{} families x {FD_INSTANCES} instances, worst relative error {err:.3e} ({name} {slot}); \
             {redrawn} draw(s) replaced for straddling a kink",
            families.len()
        ),
    );
}

/// Slots whose values differ bitwise between two models.
fn moved(before: &Model, after: &Model) -> Vec<SlotKey> {
    after
        .params()
        .iter()
        .filter(|(k, p)| !p.value.bit_eq(&before.params()[*k].value))
        .map(|(k, _)| k.clone())
        .collect()
}

fn c7_frozen(g: &mut Gate, fx: &Fixture) {
    type Allowed<'a> = (Method, &'a dyn Fn(&SlotKey) -> bool);
    let allowed: [Allowed; 3] = [
        (Method::LoraEdge, &|k| k.name == core_slot(1)),
        (Method::Bias, &|k| k.name == BIAS),
        (Method::Bn, &|k| {
            [GAMMA, BETA, RUNNING_MEAN, RUNNING_VAR].contains(&k.name.as_str())
        }),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (method, allow) in allowed {
        let cfg = FinetuneConfig {
            method,
            ..fx.config.finetune.clone()
        };
        let mut m = fx.pretrained.clone();
        prepare(&mut m, &cfg, 0).unwrap();
        let before = m.clone();
        finetune(&mut m, &fx.target, &cfg, 0).unwrap();
        let changed = moved(&before, &m);
        let stray = changed.iter().filter(|k| !allow(k)).count();
        ok &= stray == 0 && !changed.is_empty();
        details.push(format!(
            "{method}: {} slots moved, {stray} outside its set",
            changed.len()
        ));
    }
    g.record("7", ok, format!("50-step runs; {}", details.join("; ")));
}

fn c8_protocol(g: &mut Gate, fx: &Fixture) {
    let base = fx.config.finetune.clone();
    let runs = run_comparison(fx, &base, &[Method::LoraEdge, Method::Full], 0).unwrap();
    let again = run_comparison(fx, &base, &[Method::LoraEdge, Method::Full], 0).unwrap();
    let (edge, full) = (&runs[0], &runs[1]);
    let (train_idx, test_idx) = split_indices(&fx.target, 0.8, 0).unwrap();
    let mut m = fx.pretrained.clone();
    prepare(&mut m, &base, 0).unwrap();
    let rank_ok = m.params()[&SlotKey::new(3, core_slot(1))].value.shape() == [1, 8, 2];
    let ok = base.rank == 2
        && rank_ok
        && [edge, full]
            .iter()
            .all(|r| r.batch_size == 64 && r.adam_steps == 50 && r.evals.len() == 51)
        && edge.lr == 0.01
        && full.lr == 0.001
        && (edge.train_size, edge.test_size) == (train_idx.len(), test_idx.len())
        && edge.train_size * 5 == fx.target.len() * 4
        && run_csv(edge) == run_csv(&again[0])
        && run_csv(full) == run_csv(&again[1]);
    g.record(
        "8",
        ok,
        format!(
            "batch {}, {} steps, lr {} / {}, r_T {}, split {}/{}, reruns identical: {}",
            edge.batch_size,
            edge.adam_steps,
            edge.lr,
            full.lr,
            base.rank,
            edge.train_size,
            edge.test_size,
            run_csv(edge) == run_csv(&again[0])
        ),
    );
}

fn c9_comparison(g: &mut Gate, fx: &Fixture) {
    let peft = [
        Method::LoraEdge,
        Method::LoraC,
        Method::LoraLinear,
        Method::Bias,
        Method::Bn,
    ];
    let runs = run_comparison(fx, &fx.config.finetune, &peft, 0).unwrap();
    let improved: Vec<String> = runs
        .iter()
        .map(|r| format!("{} {:.4}->{:.4}", r.method, r.zero_shot_f1(), r.final_f1()))
        .collect();
    let all_improve = runs.iter().all(|r| r.final_f1() > r.zero_shot_f1());
    g.record(
        "9a",
        all_improve,
        format!("zero-shot -> final: {}", improved.join(", ")),
    );

    // Matched rank: LoRA-Edge r_T = 1 against LoRA-C r = 1.
    let mut edge = fx.pretrained.clone();
    attach_lora_edge(&mut edge, 1, &[1]).unwrap();
    let mut lora_c = fx.pretrained.clone();
    attach_lora_c(
        &mut lora_c,
        LoraCRank::Effective(1),
        1e-3,
        false,
        &mut rng(9),
    )
    .unwrap();
    let (e, c) = (param_report(&edge), param_report(&lora_c));
    let default_edge = &runs[0].params;
    let ok = e.percent < c.percent && default_edge.percent < runs[1].params.percent;
    g.record(
        "9c",
        ok,
        format!(
            "trainable share at rank 1: lora-edge {}% < lora-c {}%; defaults {}% < {}%",
            e.percent_display(),
            c.percent_display(),
            default_edge.percent_display(),
            runs[1].params.percent_display()
        ),
    );
}

fn c10_ablation(g: &mut Gate, fx: &Fixture) {
    let runs = run_ablation_cores(fx, &fx.config.finetune, 0).unwrap();
    let csv = ablation_csv(&runs);
    let steps = fx.config.finetune.steps + 1;
    let complete = csv.lines().count() == 1 + 6 * steps;
    let all = runs.iter().find(|r| r.arm.name == "All").unwrap();
    let g1 = runs.iter().find(|r| r.arm.name == "G1 only").is_some();
    let g1_zero = runs
        .iter()
        .find(|r| r.arm.name == "All & zero-init G1")
        .is_some();
    let step1 = all.result.f1_at(1).unwrap();
    let ok = complete && g1 && g1_zero && step1 <= all.result.final_f1();
    g.record(
        "10",
        ok,
        format!(
            "{} arms x {steps} evals in CSV; All arm step-1 {step1:.4} <= final {:.4}",
            runs.len(),
            all.result.final_f1()
        ),
    );
}

fn c11_sweep(g: &mut Gate, fx: &Fixture) {
    let sweep = &fx.config.sweep;
    let cells = run_init_sweep(
        fx,
        &fx.config.finetune,
        &sweep.lrs[..1],
        &sweep.sigma2s[..1],
        &[0],
    )
    .unwrap();
    let csv = sweep_csv(&cells);
    let ok = csv.starts_with("lr,sigma2,delta_f1_pct,f1_ttsvd,f1_random,runs\n")
        && csv.lines().count() == 2;
    g.record(
        "11",
        ok,
        format!("grid CSV produced ({} cell)", cells.len()),
    );
}

#[test]
fn acceptance() {
    let mut g = Gate {
        failures: Vec::new(),
    };
    c1_core_shapes(&mut g);
    c2_param_counts(&mut g);
    c3_zero_start(&mut g);
    c5_tt_exactness(&mut g);
    c6_gradients(&mut g);

    let t = Instant::now();
    let fx = build_fixture(&fixture_config()).unwrap();
    let (clean, shifted) = fx.shift_drop().unwrap();
    println!(
        "fixture: source F1 {:.4}, target clean {clean:.4}, shifted {shifted:.4} ({:.1}s)",
        fx.source_f1().unwrap(),
        t.elapsed().as_secs_f64()
    );
    assert!(evaluate(&fx.pretrained, &fx.target).is_ok());
    c4_merge(&mut g, &fx);
    c7_frozen(&mut g, &fx);
    c8_protocol(&mut g, &fx);
    let t = Instant::now();
    c9_comparison(&mut g, &fx);
    println!("comparison took {:.1}s", t.elapsed().as_secs_f64());
    c10_ablation(&mut g, &fx);
    c11_sweep(&mut g, &fx);

    assert!(
        g.failures.is_empty(),
        "failed criteria:\n{}",
        g.failures.join("\n")
    );
}
