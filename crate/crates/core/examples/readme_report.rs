//! Write a README for one or more finished build directories.
//!
//! cargo run --example readme_report -- <build_dir>... [--out README.md]

use std::path::PathBuf;

use trunk::report::{render_readme, BuildSummary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut dirs = vec![];
    let mut out = None;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--out" {
            out = args.next().map(PathBuf::from);
        } else {
            dirs.push(PathBuf::from(a));
        }
    }
    if dirs.is_empty() {
        eprintln!("usage: readme_report <build_dir>... [--out README.md]");
        std::process::exit(1);
    }
    let summaries = dirs
        .iter()
        .map(|d| BuildSummary::load(d))
        .collect::<trunk::Result<Vec<_>>>()?;
    let text = render_readme(&summaries)?;
    match out {
        Some(path) => std::fs::write(&path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
