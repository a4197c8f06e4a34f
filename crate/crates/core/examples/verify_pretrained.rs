//! Full-scale check of published weights against the reported accuracies.
//!
//! Not part of CI: it needs the real datasets under $TRUNK_DATA_ROOT and a
//! directory of converted weights laid out as `<weights_root>/<dataset>/`
//! with `tree.json` and `nodes/<id>/weights.{bin,json}`. Claims live in
//! `reference/claims/<dataset>.json`.
//!
//! cargo run --release --example verify_pretrained -- <weights_root> [emnist cifar10 svhn]

use std::path::PathBuf;
use std::process::ExitCode;

use trunk::config::{shipped_config, DatasetName};
use trunk::data::{data_root, LoadOptions};
use trunk::evaluator::{verify_pretrained, Verdict};

const TOLERANCE: f64 = 0.1;

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let Some(root) = args.next().map(PathBuf::from) else {
        eprintln!("usage: verify_pretrained <weights_root> [dataset ...]");
        return ExitCode::from(1);
    };
    let mut datasets: Vec<String> = args.collect();
    if datasets.is_empty() {
        datasets = ["emnist", "cifar10", "svhn"].map(String::from).to_vec();
    }
    let claims_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("reference/claims");
    let mut all_pass = true;
    for ds in &datasets {
        let name: DatasetName = match ds.parse() {
            Ok(n) => n,
            Err(e) => {
                eprintln!("{ds}: {e}");
                return ExitCode::from(1);
            }
        };
        let dir = root.join(ds);
        let result = verify_pretrained(
            &dir,
            &dir.join("tree.json"),
            &shipped_config(name),
            &claims_dir.join(format!("{ds}.json")),
            TOLERANCE,
            &data_root(),
            &LoadOptions::default(),
        );
        match result {
            Ok(r) => {
                println!(
                    "{ds:<8} measured {:.2}%  claimed {}  gap {}  {:?}",
                    r.measured,
                    r.claimed.map(|c| format!("{c:.2}%")).unwrap_or_else(|| "-".into()),
                    r.gap.map(|g| format!("{g:.2}")).unwrap_or_else(|| "-".into()),
                    r.verdict
                );
                all_pass &= r.verdict == Verdict::Pass;
            }
            Err(e) => {
                println!("{ds:<8} error: {e}");
                all_pass = false;
            }
        }
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
