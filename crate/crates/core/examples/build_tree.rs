//! Grow and train a tree from a config, then evaluate it on the test split.
//!
//! cargo run --release --example build_tree -- [config.yaml] [build_dir]

use std::path::PathBuf;

use trunk::config::load_config;
use trunk::data::data_root;
use trunk::evaluator::evaluate_build;
use trunk::trainer::{build_and_train, BuildOptions};
use trunk::tree::{fingerprint, to_dot};

fn main() -> trunk::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config_path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/synthetic.yaml").into());
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "runs/build_tree".into()));
    let config = load_config(&config_path)?;
    let opts = BuildOptions {
        data_root: data_root(),
        ..Default::default()
    };
    let report = build_and_train(&config, &dir, &opts)?;
    for r in &report.node_reports {
        println!(
            "node {:<6} groups {:?} val_acc {:.3} loss {:.4}",
            r.node_id, r.grouping, r.val_accuracy, r.final_train_loss
        );
    }
    println!("{}", to_dot(&report.tree)?);
    println!("fingerprint {}", fingerprint(&report.tree)?);
    let eval = evaluate_build(&config, &dir, &opts.data_root, &opts.load)?;
    println!(
        "test accuracy {:.4}  mean FLOPs/image {:.0} of {}  routing {:.3}s  build {:.1}s",
        eval.accuracy, eval.mean_flops_per_image, eval.all_internal_flops, eval.total_time, report.total_wall_time
    );
    Ok(())
}
