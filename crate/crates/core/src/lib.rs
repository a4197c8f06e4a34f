//! TRUNK: a hierarchical image classifier built as a tree of shallow
//! networks, with the tooling needed to rebuild, compare and document runs.
//!
//! The tree is grown from data. The root is trained on all categories, its
//! validation confusions are clustered under the grouping-volatility
//! threshold, and every multi-category group becomes a child node trained on
//! that group alone. Inference routes an image down one path, so only the
//! networks on that path run.
//!
//! Around the classifier sit the reproducibility pieces: declarative configs
//! with overrides, seeded data pipelines, run manifests, sensitivity sweeps
//! that track tree structure, dependency-manifest generation and README
//! scaffolding.

#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod data;
pub mod envkit;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod provenance;
pub mod report;
pub mod seed;
pub mod sim;
pub mod sweep;
pub mod tensor;
pub mod trainer;
pub mod tree;

pub use error::{Error, Result};
