//! Print the six CIFAR-10 training regimes and apply one to the shipped config.
//!
//! cargo run --example regimes -- [1..6]

use trunk::config::{apply_overrides, regimes, shipped_config, DatasetName, Split};
use trunk::data::build_pipeline;
use trunk::tensor::ImageShape;

fn main() -> trunk::Result<()> {
    let pick: u8 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let shape = ImageShape::new(3, 32, 32);
    for r in regimes::all() {
        let pipeline = build_pipeline(&r.transforms, shape)?;
        println!(
            "{}  lr {}  batch {}  gv {}  reported {:.2}%",
            r.name(),
            r.lr,
            r.batch_size,
            r.grouping_volatility,
            r.reported_accuracy
        );
        for line in pipeline.describe() {
            println!("    {line}");
        }
    }

    let base = shipped_config(DatasetName::Cifar10);
    let regime = regimes::regime(pick).expect("regime id in 1..=6");
    let config = apply_overrides(&regime.apply(&base)?, &["training.epochs=5"])?;
    println!("\n{} applied, digest {}", regime.name(), &config.digest()[..12]);
    println!("train batch size {}", config.splits.get(Split::Train).batch_size);
    println!("epochs {}", config.training.epochs);
    Ok(())
}
