//! Sweep grouping volatility on the synthetic dataset and list the distinct trees.
//!
//! cargo run --release --example sweep_gv -- [sweep_dir]

use std::path::PathBuf;

use trunk::config::load_config;
use trunk::sweep::{distinct_trees, run_sweep, SweepOptions, SweepSpec, SweepValues};

fn main() -> trunk::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/sweep_gv".into()));
    let config = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/synthetic.yaml"))?;
    let spec = SweepSpec::new(
        config,
        "training.grouping_volatility",
        SweepValues::List(["0.005", "0.02", "0.2", "1000"].map(String::from).to_vec()),
    );
    let records = run_sweep(&spec, &dir, &SweepOptions::default())?;
    for r in &records {
        println!(
            "gv {:<6} {:<6} acc {:>6}  depth {:>2}  tree {}",
            r.value,
            r.status,
            r.accuracy.map(|a| format!("{:.3}", a)).unwrap_or_default(),
            r.depth.map(|d| d.to_string()).unwrap_or_default(),
            r.fingerprint.as_deref().map(|f| &f[..12]).unwrap_or("-")
        );
    }
    println!(
        "{} distinct trees; table and plot in {}",
        distinct_trees(&records).len(),
        dir.display()
    );
    Ok(())
}
