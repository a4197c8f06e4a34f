//! Average-softmax similarity between categories and the grouping rule that
//! shapes the tree.
//!
//! Two groups `i` and `j` of a `K`-way node merge when their symmetrised
//! confusion `(S[i][j] + S[j][i]) / 2` is strictly above `gv / K`, i.e.
//! `gv` times the chance level; the groups of a node are the connected
//! components of that relation.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AugmentationPipeline, Dataset};
use crate::error::{fsx, Error, Result};
use crate::tensor::{Image, Tensor};

const ROW_TOLERANCE: f64 = 1e-6;
const BATCH: usize = 64;

/// Anything that maps an image batch to per-row probability vectors.
pub trait ProbabilityModel {
    fn num_outputs(&self) -> usize;
    /// One probability vector of length `num_outputs` per image.
    fn predict(&self, batch: &Tensor) -> Vec<Vec<f64>>;
}

/// `entries[i][j]`: mean probability the model assigns to output `j` over
/// validation images of label `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    /// Checked constructor: square, finite, entries in `[0, 1]`, rows summing to 1.
    pub fn new(labels: Vec<String>, entries: Vec<Vec<f64>>) -> Result<Self> {
        let k = entries.len();
        if k == 0 {
            return Err(Error::Similarity("empty matrix".into()));
        }
        if labels.len() != k {
            return Err(Error::Similarity(format!(
                "{} labels for a {k}x{k} matrix",
                labels.len()
            )));
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Similarity(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if let Some(v) = row
                .iter()
                .find(|v| !v.is_finite() || **v < -ROW_TOLERANCE || **v > 1.0 + ROW_TOLERANCE)
            {
                return Err(Error::Similarity(format!("row {i} has entry {v} outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Similarity(format!(
                    "row {i} sums to {s}, not 1 (matrix is not row-stochastic)"
                )));
            }
        }
        Ok(Self { labels, entries })
    }

    /// Labels `0..K` as strings.
    pub fn indexed(entries: Vec<Vec<f64>>) -> Result<Self> {
        let labels = (0..entries.len()).map(|i| i.to_string()).collect();
        Self::new(labels, entries)
    }

    pub fn identity(k: usize) -> Self {
        let e = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::indexed(e).expect("identity is row-stochastic")
    }

    pub fn uniform(k: usize) -> Self {
        Self::indexed(vec![vec![1.0 / k as f64; k]; k]).expect("uniform is row-stochastic")
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn merge_score(&self, i: usize, j: usize) -> f64 {
        (self.entries[i][j] + self.entries[j][i]) / 2.0
    }

    /// Header of labels followed by one line per row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.labels)?;
        for row in &self.entries {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Similarity(e.to_string()))?).expect("utf8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let labels = r.headers()?.iter().map(str::to_string).collect();
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Similarity(format!("bad entry `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push(row);
        }
        Self::new(labels, entries)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fsx::write(path, self.to_csv()?)
    }
}

/// A partition of a node's `0..K` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    /// Sorted sets ordered by smallest member.
    pub partition: Vec<BTreeSet<usize>>,
    pub gv_used: f64,
}

impl Grouping {
    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partition.is_empty()
    }

    /// True when every set of `self` lies inside some set of `coarser`.
    pub fn refines(&self, coarser: &Grouping) -> bool {
        self.partition
            .iter()
            .all(|s| coarser.partition.iter().any(|c| s.is_subset(c)))
    }

    /// Index of the set containing `member`.
    pub fn group_of(&self, member: usize) -> Option<usize> {
        self.partition.iter().position(|s| s.contains(&member))
    }
}

/// Sort sets internally (implicit for `BTreeSet`) and order them by smallest member.
pub fn canonical_partition(mut sets: Vec<BTreeSet<usize>>) -> Vec<BTreeSet<usize>> {
    sets.retain(|s| !s.is_empty());
    sets.sort_by_key(|s| *s.first().unwrap());
    sets
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of `c(i, j) > gv / K`.
pub fn group_categories(s: &SimilarityMatrix, gv: f64) -> Result<Grouping> {
    if !(gv.is_finite() && gv > 0.0) {
        return Err(Error::Similarity(format!("grouping volatility must be > 0 (got {gv})")));
    }
    // Re-check in case the matrix was built field by field.
    SimilarityMatrix::new(s.labels.clone(), s.entries.clone())?;
    let k = s.k();
    let threshold = gv / k as f64;
    let mut parent: Vec<usize> = (0..k).collect();
    for i in 0..k {
        for j in i + 1..k {
            if s.merge_score(i, j) > threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for i in 0..k {
        let r = find(&mut parent, i);
        sets[r].insert(i);
    }
    Ok(Grouping {
        partition: canonical_partition(sets),
        gv_used: gv,
    })
}

/// Group count at each `gv`, in the given order.
pub fn grouping_profile(s: &SimilarityMatrix, gv_values: &[f64]) -> Result<Vec<(f64, usize)>> {
    gv_values
        .iter()
        .map(|&gv| Ok((gv, group_categories(s, gv)?.len())))
        .collect()
}

/// Inclusive arithmetic range, with values rounded to 12 decimals so
/// `0.60 + 20 * 0.03` lands on `1.2`.
pub fn gv_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect()
}

/// Average the model's outputs per label over `val`.
pub fn compute_similarity(
    model: &dyn ProbabilityModel,
    val: &Dataset,
    pipeline: &AugmentationPipeline,
    labels: &[String],
) -> Result<SimilarityMatrix> {
    let k = labels.len();
    if model.num_outputs() != k {
        return Err(Error::Similarity(format!(
            "model has {} outputs but {k} labels were given",
            model.num_outputs()
        )));
    }
    let mut sums = vec![vec![0.0; k]; k];
    let mut counts = vec![0usize; k];
    // Validation transforms are normally deterministic; a fixed stream keeps
    // the matrix reproducible when they are not.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..val.len()).collect();
    for chunk in idx.chunks(BATCH) {
        let images: Vec<Image> = chunk.iter().map(|&i| pipeline.apply(val.image(i), &mut rng)).collect();
        let probs = model.predict(&Tensor::from_images(&images));
        for (&i, p) in chunk.iter().zip(&probs) {
            let l = val.label(i);
            if l >= k {
                return Err(Error::Similarity(format!("validation label {l} outside 0..{k}")));
            }
            counts[l] += 1;
            for (acc, v) in sums[l].iter_mut().zip(p) {
                *acc += v;
            }
        }
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Similarity(format!(
            "label {} ({}) has no validation images; its similarity row cannot be estimated",
            i, labels[i]
        )));
    }
    let entries = sums
        .into_iter()
        .zip(&counts)
        .map(|(row, &c)| row.into_iter().map(|v| v / c as f64).collect())
        .collect();
    SimilarityMatrix::new(labels.to_vec(), entries)
}
