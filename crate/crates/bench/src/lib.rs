//! Shared fixtures for the criterion benchmarks.

use gem_core::{make_dataset, ExperimentConfig, PolicyParams, TaskDataset};

/// Default experiment config and its dataset.
pub fn default_setup() -> (ExperimentConfig, TaskDataset) {
    let cfg = ExperimentConfig::default();
    let data = make_dataset(&cfg.task).expect("default task is valid");
    (cfg, data)
}

/// A randomly initialised policy sized for `data`.
pub fn random_policy(cfg: &ExperimentConfig, data: &TaskDataset, scale: f64) -> PolicyParams {
    PolicyParams::init(data.vocab(), cfg.policy.context_length, scale, 7).expect("valid policy")
}
