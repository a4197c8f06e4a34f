//! Scan a Python source tree, write pip and conda manifests, and check them.
//!
//! cargo run --example env_manifests -- [source_dir] [out_dir]

use std::collections::BTreeSet;
use std::path::PathBuf;

use trunk::envkit::{self, ImportMap};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let src = PathBuf::from(
        args.next()
            .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy_src").into()),
    );
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/env".into()));
    std::fs::create_dir_all(&out)?;

    let scan = envkit::scan(&src, &ImportMap::shipped())?;
    println!("{} files, packages {:?}", scan.files_scanned, scan.deps.names);
    for n in scan.notes.iter().chain(&scan.warnings) {
        println!("  {n}");
    }
    let deps = scan
        .deps
        .clone()
        .with_find_links("https://download.pytorch.org/whl/cu121");
    let channels = ["pytorch", "nvidia", "defaults"].map(String::from);
    let req = out.join("requirements.txt");
    let env = out.join("environment.yml");
    std::fs::write(&req, envkit::emit_pip_manifest(&deps))?;
    std::fs::write(
        &env,
        envkit::emit_conda_manifest(&deps, "trunk", &channels, &BTreeSet::new()),
    )?;
    println!("--- {}\n{}", req.display(), std::fs::read_to_string(&req)?);
    println!("--- {}\n{}", env.display(), std::fs::read_to_string(&env)?);

    for manifest in [&req, &env] {
        let report = envkit::validate_manifest(manifest, &src)?;
        print!("check {}:\n{}", manifest.display(), report.to_text());
    }
    Ok(())
}
