//! Dataset ingestion, the synthetic desk-scale dataset, augmentation
//! pipelines and per-node relabelling.

mod formats;
mod stats;
pub mod synthetic;
pub mod transforms;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetName, ExperimentConfig, Split, SplitConfig};
use crate::error::{Error, Result};
use crate::seed::SeedSource;
use crate::tensor::{Image, ImageShape, Tensor};

pub use formats::read_mat_v5;
pub use stats::{compute_normalization_stats, normalization_stats, NormStats};
pub use transforms::{build_pipeline, AugmentationPipeline, Step};

/// Fraction of each category's train images carved off as validation data.
pub const VALIDATION_FRACTION: f64 = 0.10;

/// Environment variable naming the directory that holds dataset files.
pub const DATA_ROOT_ENV: &str = "TRUNK_DATA_ROOT";

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Static description of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub name: String,
    pub image_shape: ImageShape,
    pub num_categories: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub category_names: Vec<String>,
}

const CIFAR10_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

const EMNIST_BALANCED_NAMES: &str = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabdefghnqrt";

impl DatasetHandle {
    /// Metadata for a published dataset; `None` for the synthetic one, whose
    /// shape comes from its config.
    pub fn published(name: DatasetName) -> Option<Self> {
        let h = match name {
            DatasetName::Emnist => DatasetHandle {
                name: name.to_string(),
                image_shape: ImageShape::new(1, 28, 28),
                num_categories: 47,
                train_size: 112_800,
                test_size: 18_800,
                category_names: EMNIST_BALANCED_NAMES.chars().map(|c| c.to_string()).collect(),
            },
            DatasetName::Cifar10 => DatasetHandle {
                name: name.to_string(),
                image_shape: ImageShape::new(3, 32, 32),
                num_categories: 10,
                train_size: 50_000,
                test_size: 10_000,
                category_names: CIFAR10_NAMES.iter().map(|s| s.to_string()).collect(),
            },
            DatasetName::Svhn => DatasetHandle {
                name: name.to_string(),
                image_shape: ImageShape::new(3, 32, 32),
                num_categories: 10,
                train_size: 73_257,
                test_size: 26_032,
                category_names: (0..10).map(|d| d.to_string()).collect(),
            },
            DatasetName::Synthetic => return None,
        };
        Some(h)
    }

    pub fn for_config(config: &ExperimentConfig) -> Result<Self> {
        let name = config.dataset_name()?;
        match DatasetHandle::published(name) {
            Some(h) => Ok(h),
            None => {
                let s = config
                    .synthetic
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("missing field: dataset.synthetic".into()))?;
                Ok(synthetic::handle(s))
            }
        }
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Test => self.test_size,
            // Before the validation carve.
            Split::Train | Split::Validation => self.train_size,
        }
    }

    /// Number of batches one pass over `n` images yields.
    pub fn num_batches(n: usize, batch_size: usize) -> usize {
        n.div_ceil(batch_size.max(1))
    }
}

/// Labelled images held in memory as bytes.
///
/// `labels` are what a network is trained to predict; `categories` keep the
/// original dataset category of every image so relabelled subsets can still
/// be scored at the category level.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub shape: ImageShape,
    pub num_labels: usize,
    pub category_names: Vec<String>,
    images: Vec<u8>,
    labels: Vec<usize>,
    categories: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: ImageShape,
        category_names: Vec<String>,
        images: Vec<u8>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if images.len() != labels.len() * shape.len() {
            return Err(Error::Data(format!(
                "{} image bytes do not match {} labels of shape {shape}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= category_names.len()) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {} categories",
                category_names.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            shape,
            num_labels: category_names.len(),
            category_names,
            categories: labels.clone(),
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        let l = self.shape.len();
        &self.images[i * l..(i + 1) * l]
    }

    pub fn image(&self, i: usize) -> Image {
        Image::from_u8(self.shape, self.raw(i))
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn category(&self, i: usize) -> usize {
        self.categories[i]
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    /// Distinct original categories present.
    pub fn category_set(&self) -> BTreeSet<usize> {
        self.categories.iter().copied().collect()
    }

    pub fn count_per_category(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &c in &self.categories {
            *m.entry(c).or_insert(0) += 1;
        }
        m
    }

    pub fn count_per_label(&self) -> Vec<usize> {
        let mut v = vec![0; self.num_labels];
        for &l in &self.labels {
            v[l] += 1;
        }
        v
    }

    fn select(&self, idx: &[usize]) -> Dataset {
        let l = self.shape.len();
        let mut images = Vec::with_capacity(idx.len() * l);
        for &i in idx {
            images.extend_from_slice(self.raw(i));
        }
        Dataset {
            name: self.name.clone(),
            shape: self.shape,
            num_labels: self.num_labels,
            category_names: self.category_names.clone(),
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            categories: idx.iter().map(|&i| self.categories[i]).collect(),
        }
    }

    /// Keep at most `n` images of every category, preserving order.
    pub fn cap_per_category(&self, n: usize) -> Dataset {
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = seen.entry(self.categories[i]).or_insert(0);
                *c += 1;
                *c <= n
            })
            .collect();
        self.select(&idx)
    }

    /// Stratified, seeded split: roughly `fraction` of each category goes to
    /// the second dataset (at least one image when the category has two or
    /// more).
    pub fn carve(&self, fraction: f64, rng: &mut ChaCha8Rng) -> (Dataset, Dataset) {
        let mut by_cat: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            by_cat.entry(self.categories[i]).or_default().push(i);
        }
        let (mut keep, mut held) = (Vec::new(), Vec::new());
        for idx in by_cat.values_mut() {
            idx.shuffle(rng);
            let mut k = (idx.len() as f64 * fraction).floor() as usize;
            if k == 0 && idx.len() >= 2 && fraction > 0.0 {
                k = 1;
            }
            held.extend_from_slice(&idx[..k]);
            keep.extend_from_slice(&idx[k..]);
        }
        keep.sort_unstable();
        held.sort_unstable();
        (self.select(&keep), self.select(&held))
    }

    /// Iterate batches in file order or shuffled, applying `pipeline` to every image.
    pub fn batches<'a>(
        &'a self,
        batch_size: usize,
        shuffle: bool,
        pipeline: &'a AugmentationPipeline,
        mut rng: ChaCha8Rng,
    ) -> BatchIter<'a> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            order.shuffle(&mut rng);
        }
        BatchIter {
            data: self,
            order,
            pos: 0,
            batch_size: batch_size.max(1),
            pipeline,
            rng,
        }
    }
}

/// Filter `data` to `subset` and replace labels by `group_map[category]`.
pub fn restrict_and_relabel(
    data: &Dataset,
    subset: &BTreeSet<usize>,
    group_map: &BTreeMap<usize, usize>,
) -> Result<Dataset> {
    if subset.is_empty() {
        return Err(Error::Data("cannot restrict to an empty category subset".into()));
    }
    if let Some(c) = subset.iter().find(|c| !group_map.contains_key(c)) {
        return Err(Error::Data(format!("group map has no entry for category {c}")));
    }
    let groups: BTreeSet<usize> = subset.iter().map(|c| group_map[c]).collect();
    let num_groups = groups.len();
    if groups.iter().copied().ne(0..num_groups) {
        return Err(Error::Data(format!(
            "group indices must be contiguous from 0, got {groups:?}"
        )));
    }
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| subset.contains(&data.categories[i]))
        .collect();
    let mut out = data.select(&idx);
    out.labels = idx.iter().map(|&i| group_map[&data.categories[i]]).collect();
    out.num_labels = num_groups;
    Ok(out)
}

/// One batch, transformed and stacked.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub categories: Vec<usize>,
}

pub struct BatchIter<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    pipeline: &'a AugmentationPipeline,
    rng: ChaCha8Rng,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let images: Vec<Image> = idx
            .iter()
            .map(|&i| self.pipeline.apply(self.data.image(i), &mut self.rng))
            .collect();
        Some(Batch {
            images: Tensor::from_images(&images),
            labels: idx.iter().map(|&i| self.data.label(i)).collect(),
            categories: idx.iter().map(|&i| self.data.category(i)).collect(),
        })
    }
}

/// How the validation split was carved, for the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarveRecord {
    pub fraction: f64,
    pub stream: String,
    pub seed: u64,
    pub train_images: usize,
    pub validation_images: usize,
}

/// Train, validation and test data for one run.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub handle: DatasetHandle,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub carve: CarveRecord,
    /// Content hashes of the raw files (or generated bytes) the data came from.
    pub checksums: BTreeMap<String, String>,
    /// True when a published dataset was replaced by a synthetic stand-in.
    pub surrogate: bool,
}

/// Options affecting what is loaded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Keep at most this many images per category in every split.
    pub max_per_category: Option<usize>,
    /// Replace a missing published dataset with a synthetic one of the same
    /// shape and category count instead of failing.
    pub surrogate_if_missing: bool,
}

impl DataBundle {
    pub fn load(config: &ExperimentConfig, root: &Path, opts: &LoadOptions) -> Result<Self> {
        let name = config.dataset_name()?;
        let handle = DatasetHandle::for_config(config)?;
        let seeds = SeedSource::new(config.seed);
        let (full_train, test, checksums, surrogate) = match name {
            DatasetName::Synthetic => {
                let spec = config.synthetic.as_ref().expect("validated");
                let (tr, te, sum) = synthetic::generate(spec, seeds);
                (tr, te, sum, false)
            }
            _ => match formats::load_published(name, root, &handle) {
                Ok((tr, te, sums)) => (tr, te, sums, false),
                Err(Error::MissingData { .. }) if opts.surrogate_if_missing => {
                    let spec = synthetic::surrogate_spec(&handle);
                    let (mut tr, mut te, sum) = synthetic::generate(&spec, seeds);
                    tr.category_names = handle.category_names.clone();
                    te.category_names = handle.category_names.clone();
                    tr.name = format!("{name}-surrogate");
                    te.name = tr.name.clone();
                    (tr, te, sum, true)
                }
                Err(e) => return Err(e),
            },
        };
        let (full_train, test) = match opts.max_per_category {
            Some(n) => (full_train.cap_per_category(n), test.cap_per_category(n)),
            None => (full_train, test),
        };
        let stream = "validation-carve".to_string();
        let (train, validation) = full_train.carve(VALIDATION_FRACTION, &mut seeds.rng(&stream));
        let carve = CarveRecord {
            fraction: VALIDATION_FRACTION,
            stream,
            seed: config.seed,
            train_images: train.len(),
            validation_images: validation.len(),
        };
        Ok(DataBundle {
            handle,
            train,
            validation,
            test,
            carve,
            checksums,
            surrogate,
        })
    }

    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Owning batch stream over one split.
pub struct BatchStream {
    data: Dataset,
    pipeline: AugmentationPipeline,
    split: SplitConfig,
    rng: Option<ChaCha8Rng>,
    order: Vec<usize>,
    pos: usize,
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos == 0 && self.order.is_empty() {
            self.order = (0..self.data.len()).collect();
            if self.split.shuffle {
                self.order.shuffle(self.rng.as_mut().expect("rng present"));
            }
        }
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.split.batch_size).min(self.order.len());
        let idx: Vec<usize> = self.order[self.pos..end].to_vec();
        self.pos = end;
        let rng = self.rng.as_mut().expect("rng present");
        let images: Vec<Image> = idx
            .iter()
            .map(|&i| self.pipeline.apply(self.data.image(i), rng))
            .collect();
        Some(Batch {
            images: Tensor::from_images(&images),
            labels: idx.iter().map(|&i| self.data.label(i)).collect(),
            categories: idx.iter().map(|&i| self.data.category(i)).collect(),
        })
    }
}

impl BatchStream {
    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn num_batches(&self) -> usize {
        DatasetHandle::num_batches(self.data.len(), self.split.batch_size)
    }
}

/// Batches of `split` for `config.dataset`, with that split's batch size,
/// shuffling and transforms.
pub fn load_dataset(config: &ExperimentConfig, split: Split, root: &Path) -> Result<BatchStream> {
    let bundle = DataBundle::load(config, root, &LoadOptions::default())?;
    let split_cfg = config.splits.get(split).clone();
    let pipeline = build_pipeline(&split_cfg.transforms, bundle.handle.image_shape)?;
    let seeds = SeedSource::new(config.seed);
    Ok(BatchStream {
        data: bundle.split(split).clone(),
        pipeline,
        rng: Some(seeds.rng(&format!("stream-{split}"))),
        split: split_cfg,
        order: Vec::new(),
        pos: 0,
    })
}
