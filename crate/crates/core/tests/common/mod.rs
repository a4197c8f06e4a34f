#![allow(dead_code)]

use std::path::{Path, PathBuf};

use trunk::config::{load_config, ExperimentConfig};
use trunk::data::LoadOptions;
use trunk::evaluator::{evaluate_build, EvalResult};
use trunk::trainer::{build_and_train, BuildOptions, BuildReport};

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(rel: &str) -> PathBuf {
    crate_dir().join("tests").join(rel)
}

/// The synthetic four-category configuration.
pub fn desk_config() -> ExperimentConfig {
    load_config(crate_dir().join("configs/synthetic.yaml")).unwrap()
}

/// A smaller, one-epoch variant for tests that need many builds.
pub fn quick_config() -> ExperimentConfig {
    let mut c = desk_config();
    c.training.epochs = 1;
    c
}

pub fn quick_options() -> BuildOptions {
    BuildOptions {
        load: LoadOptions {
            max_per_category: Some(60),
            surrogate_if_missing: false,
        },
        ..Default::default()
    }
}

pub fn build_and_eval(config: &ExperimentConfig, dir: &Path, opts: &BuildOptions) -> (BuildReport, EvalResult) {
    let report = build_and_train(config, dir, opts).unwrap();
    let eval = evaluate_build(config, dir, &opts.data_root, &opts.load).unwrap();
    (report, eval)
}
