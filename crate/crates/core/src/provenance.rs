//! Run manifests: hardware, toolchain, seed and data identity for every result.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::CarveRecord;
use crate::error::{fsx, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const UNAVAILABLE: &str = "unavailable";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub cpu_model: String,
    pub accelerator: String,
    pub logical_cpus: String,
    pub os: String,
    pub arch: String,
}

/// A note added after the manifest was first written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Addendum {
    pub timestamp: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub timestamp: String,
    pub device: Device,
    pub runtime: BTreeMap<String, String>,
    pub seed: u64,
    pub deterministic_mode: bool,
    pub config_digest: String,
    pub dataset: String,
    pub dataset_checksums: BTreeMap<String, String>,
    pub validation_carve: Option<CarveRecord>,
    pub artifact_version: String,
    #[serde(default)]
    pub addenda: Vec<Addendum>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|t| {
            t.lines()
                .find(|l| l.starts_with("model name") || l.starts_with("Hardware") || l.starts_with("Processor"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| UNAVAILABLE.into())
}

pub fn device() -> Device {
    Device {
        cpu_model: cpu_model(),
        accelerator: "none (CPU)".into(),
        logical_cpus: std::thread::available_parallelism()
            .map(|n| n.get().to_string())
            .unwrap_or_else(|_| UNAVAILABLE.into()),
        os: std::env::consts::OS.into(),
        arch: std::env::consts::ARCH.into(),
    }
}

pub fn runtime_versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("rustc".to_string(), env!("TRUNK_RUSTC_VERSION").to_string()),
        ("trunk".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("float".to_string(), "f64, single-threaded kernels".to_string()),
    ])
}

/// Manifest for a run of `config`. Data identity is filled in by
/// [`RunManifest::with_data`] once the data has been loaded.
pub fn capture(config: &ExperimentConfig) -> RunManifest {
    RunManifest {
        timestamp: now(),
        device: device(),
        runtime: runtime_versions(),
        seed: config.seed,
        deterministic_mode: config.deterministic,
        config_digest: config.digest(),
        dataset: config
            .dataset
            .map(|d| d.as_str().to_string())
            .unwrap_or_else(|| UNAVAILABLE.into()),
        dataset_checksums: BTreeMap::new(),
        validation_carve: None,
        artifact_version: format!("trunk {}", env!("CARGO_PKG_VERSION")),
        addenda: vec![],
    }
}

impl RunManifest {
    pub fn with_data(mut self, checksums: &BTreeMap<String, String>, carve: &CarveRecord) -> Self {
        self.dataset_checksums = checksums.clone();
        self.validation_carve = Some(carve.clone());
        self
    }

    pub fn add_note(&mut self, note: impl Into<String>) {
        self.addenda.push(Addendum {
            timestamp: now(),
            note: note.into(),
        });
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fsx::write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fsx::read_to_string(&dir.join(MANIFEST_FILE))?)?)
    }
}

/// Top-level fields that differ between `a` and `b`, ignoring timestamps and addenda.
pub fn diff(a: &RunManifest, b: &RunManifest) -> Vec<String> {
    let (serde_json::Value::Object(x), serde_json::Value::Object(y)) = (
        serde_json::to_value(a).expect("serializes"),
        serde_json::to_value(b).expect("serializes"),
    ) else {
        unreachable!("manifests serialize to objects")
    };
    let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| !matches!(k.as_str(), "timestamp" | "addenda"))
        .filter(|k| x.get(*k) != y.get(*k))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExperimentConfig {
        crate::config::load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/svhn.yaml")).unwrap()
    }

    #[test]
    fn captures_agree_except_timestamp() {
        let a = capture(&config());
        std::thread::sleep(std::time::Duration::from_millis(2));
        let b = capture(&config());
        assert_ne!(a.timestamp, b.timestamp);
        assert!(diff(&a, &b).is_empty());
    }

    #[test]
    fn altered_config_changes_digest() {
        let mut c = config();
        c.training.grouping_volatility = 1.02;
        assert_eq!(diff(&capture(&config()), &capture(&c)), vec!["config_digest"]);
    }

    #[test]
    fn json_round_trip_and_no_empty_fields() {
        let mut m = capture(&config());
        m.add_note("resumed");
        let back: RunManifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(!m.device.cpu_model.is_empty());
        assert!(!m.runtime["rustc"].is_empty());
    }

    #[test]
    fn device_diff_is_symmetric() {
        let a = capture(&config());
        let mut b = a.clone();
        b.device.cpu_model = "other".into();
        assert_eq!(diff(&a, &b), vec!["device"]);
        assert_eq!(diff(&b, &a), diff(&a, &b));
    }
}
