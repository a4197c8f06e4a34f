//! Capture the run manifest for a config and show what changes between two runs.

use trunk::config::{apply_overrides, shipped_config, DatasetName};
use trunk::provenance::{capture, diff, RunManifest};

fn main() -> trunk::Result<()> {
    let base = shipped_config(DatasetName::Svhn);
    let a = capture(&base);
    let b = capture(&apply_overrides(
        &base,
        &["seed=7", "training.grouping_volatility=0.9"],
    )?);
    println!("{}", serde_json::to_string_pretty(&a)?);
    println!("fields that differ: {:?}", diff(&a, &b));

    let dir = tempfile_dir();
    let mut m = a.clone();
    m.add_note("demo note");
    m.save(&dir)?;
    let back = RunManifest::load(&dir)?;
    println!("reloaded from {}: {} addenda", dir.display(), back.addenda.len());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("trunk-manifest-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
