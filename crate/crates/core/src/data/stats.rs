use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{DataBundle, Dataset, LoadOptions};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Per-channel statistics of `[0, 1]`-scaled pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    /// Channels whose standard deviation is zero.
    pub degenerate: Vec<usize>,
}

/// Exact per-channel mean and standard deviation over every pixel of `data`.
pub fn normalization_stats(data: &Dataset) -> Result<NormStats> {
    if data.is_empty() {
        return Err(Error::Data("cannot compute statistics of an empty dataset".into()));
    }
    let s = data.shape;
    let (mut sum, mut sq) = (vec![0u128; s.channels], vec![0u128; s.channels]);
    for i in 0..data.len() {
        for (c, plane) in data.raw(i).chunks_exact(s.plane()).enumerate() {
            for &v in plane {
                sum[c] += v as u128;
                sq[c] += (v as u128) * (v as u128);
            }
        }
    }
    let n = (data.len() * s.plane()) as u128;
    let mut out = NormStats {
        mean: Vec::new(),
        std: Vec::new(),
        degenerate: Vec::new(),
    };
    for c in 0..s.channels {
        // n^2 * var = n * sum(x^2) - sum(x)^2, exact in integers.
        let var_n2 = n * sq[c] - sum[c] * sum[c];
        out.mean.push(sum[c] as f64 / n as f64 / 255.0);
        out.std.push((var_n2 as f64).sqrt() / n as f64 / 255.0);
        if var_n2 == 0 {
            out.degenerate.push(c);
        }
    }
    if !out.degenerate.is_empty() {
        warn!(
            "{}: zero standard deviation in channel(s) {:?}; Normalize with these statistics would divide by zero",
            data.name, out.degenerate
        );
    }
    Ok(out)
}

/// Statistics of the train split of `config`'s dataset.
pub fn compute_normalization_stats(config: &ExperimentConfig, root: &Path) -> Result<NormStats> {
    let bundle = DataBundle::load(config, root, &LoadOptions::default())?;
    normalization_stats(&bundle.train)
}
