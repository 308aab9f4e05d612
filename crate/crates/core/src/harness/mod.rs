//! Experiment engine: synthetic domain-shift data, training loops, metrics,
//! and CSV emission.

pub mod config;
pub mod data;
pub mod experiments;
pub mod fixture;
pub mod metrics;
pub mod shift;
pub mod train;

pub use config::{
    DataConfig, ExperimentConfig, FinetuneConfig, PretrainConfig, SweepConfig, TargetConfig,
};
pub use data::{gen_synthetic, load_dataset, save_dataset, split_indices, WindowDataset};
pub use experiments::{
    ablation_arms, ablation_csv, comparison_csv, confusion_csv, run_ablation_cores, run_comparison,
    run_csv, run_init_sweep, run_method, sweep_csv, AblationArm, AblationRun, SweepCell,
};
pub use fixture::{build_fixture, fixture_config, init_model, Fixture};
pub use metrics::{argmax_rows, macro_f1, Confusion};
pub use shift::{apply_shift, ShiftSpec};
pub use train::{
    evaluate, finetune, prepare, pretrain, steps_to_threshold, EvalPoint, Evaluation, RunResult,
};
