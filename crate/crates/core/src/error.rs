use std::path::PathBuf;

use thiserror::Error;

use crate::tree::{Trunk, Violation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed config {path}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    MalformedConfig {
        path: String,
        line: Option<usize>,
        message: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown override key `{key}`; valid keys: {}", valid.join(", "))]
    UnknownOverrideKey { key: String, valid: Vec<String> },

    #[error("override `{key}`: {message}")]
    OverrideValue { key: String, message: String },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown dataset `{0}`; supported: emnist, cifar10, svhn, synthetic")]
    UnknownDataset(String),

    #[error("dataset `{dataset}` not found on disk: expected {} (set TRUNK_DATA_ROOT or place the files there; source: {source_url})", expected.display())]
    MissingData {
        dataset: String,
        expected: PathBuf,
        source_url: String,
    },

    #[error("dataset: {0}")]
    Data(String),

    #[error("transform: {0}")]
    Transform(String),

    #[error("similarity: {0}")]
    Similarity(String),

    #[error("invalid tree: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidTree(Vec<Violation>),

    #[error("tree: {0}")]
    Tree(String),

    #[error("layer {layer}: {message}")]
    ShapeInference { layer: usize, message: String },

    #[error("model: {0}")]
    Model(String),

    #[error("node {node}: loss became non-finite at epoch {epoch} (lr {lr:e})")]
    NonFiniteLoss { node: String, epoch: u32, lr: f64 },

    #[error("training: {0}")]
    Train(String),

    #[error("build failed at node {node}: {source}")]
    BuildFailed {
        node: String,
        #[source]
        source: Box<Error>,
        partial: Box<Trunk>,
    },

    #[error("interrupted after {completed} completed unit(s)")]
    Interrupted { completed: usize },

    #[error("config digest mismatch: stored {stored}, current {current}; differing keys: {}", diff.join(", "))]
    DigestMismatch {
        stored: String,
        current: String,
        diff: Vec<String>,
    },

    #[error("no checkpoint for node {0}")]
    MissingCheckpoint(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("sweep: {0}")]
    Sweep(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Small helpers for filesystem calls that attach the offending path.
pub(crate) mod fsx {
    use std::path::Path;

    use super::{Error, Result};

    pub fn read(path: &Path) -> Result<Vec<u8>> {
        std::fs::read(path).map_err(|e| Error::io(path, e))
    }

    pub fn read_to_string(path: &Path) -> Result<String> {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
    }

    pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn create_dir_all(path: &Path) -> Result<()> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
    }

    /// Write to a sibling temp file, then rename over the target.
    pub fn write_atomic(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
        let tmp = path.with_extension("tmp");
        write(&tmp, bytes)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}
