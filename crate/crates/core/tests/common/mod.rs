#![allow(dead_code)]

use std::path::Path;

use openpath::synth::{generate, SynthData, SynthSpec};
use openpath::ExperimentConfig;

pub fn small_spec() -> SynthSpec {
    SynthSpec {
        samples_per_class: 60,
        test_per_class: 30,
        dim: 16,
        ..SynthSpec::default()
    }
}

pub fn small_config(spec: &SynthSpec) -> ExperimentConfig {
    let mut c = spec.experiment_config();
    c.budget_L = 8;
    c.rounds_R = 2;
    c.batches_B = 4;
    c.training.epochs = 10;
    c
}

/// Generates `spec` into `dir` with `config` as its `experiment.toml`.
pub fn write_benchmark(dir: &Path, spec: &SynthSpec, config: &ExperimentConfig) -> SynthData {
    let data = generate(spec).unwrap();
    data.write(dir, config).unwrap();
    data
}
