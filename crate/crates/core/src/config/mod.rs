//! Declarative experiment configuration.
//!
//! The on-disk format is YAML using the key vocabulary of the original
//! TRUNK pipeline files (`seed`, `dataset.{train,validation,test}`,
//! `transform`, `loss`, `grouping_volatility`, `lr_scheduler`, `optimizer`,
//! `epochs`). Hyperparameters have no defaults: a file that omits one is
//! rejected with the name of the missing key.

mod doc;
mod overrides;
pub mod regimes;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{fsx, Error, Result};

pub use overrides::{apply_overrides, flatten, override_keys};

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.pad(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text $(| $alias)* => Ok($name::$variant),)+
                    _ => Err(format!(
                        "unknown {} `{}`; expected one of: {}",
                        stringify!($name),
                        s,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

named_enum!(DatasetName {
    Emnist => "emnist",
    Cifar10 => "cifar10" | "cifar-10" | "CIFAR10",
    Svhn => "svhn",
    Synthetic => "synthetic",
});

named_enum!(Backbone {
    Mobilenet => "mobilenet",
    Vgg => "vgg",
});

named_enum!(TransformKind {
    ToTensor => "ToTensor",
    Normalize => "Normalize",
    RandomCrop => "RandomCrop",
    RandomHorizontalFlip => "RandomHorizontalFlip",
    RandomRotation => "RandomRotation",
    ColorJitter => "ColorJitter",
    RandAugment => "RandAugment",
    CutOut => "CutOut" | "Cutout",
});

named_enum!(LossKind {
    NllLoss => "NLLLoss",
    CrossEntropyLoss => "CrossEntropyLoss",
});

named_enum!(OptimizerKind {
    Adam => "Adam",
    AdamW => "AdamW",
    Sgd => "SGD",
});

named_enum!(SchedulerKind {
    CosineAnnealingLr => "CosineAnnealingLR",
    Constant => "ConstantLR" | "None",
});

named_enum!(NormMode {
    Batch => "batch",
    Layer => "layer",
});

named_enum!(Split {
    Train => "train",
    Validation => "validation",
    Test => "test",
});

/// A transform parameter: a scalar or a per-channel list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    List(Vec<f64>),
}

impl ParamValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            ParamValue::Number(v) => Some(*v),
            ParamValue::List(_) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[f64]> {
        match self {
            ParamValue::List(v) => Some(v),
            ParamValue::Number(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub params: BTreeMap<String, ParamValue>,
}

impl TransformSpec {
    pub fn new(kind: TransformKind) -> Self {
        Self {
            kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn normalize(mean: &[f64], std: &[f64]) -> Self {
        Self::new(TransformKind::Normalize)
            .with("mean", ParamValue::List(mean.to_vec()))
            .with("std", ParamValue::List(std.to_vec()))
    }

    /// Parameter names each kind accepts.
    pub fn allowed_params(kind: TransformKind) -> &'static [&'static str] {
        match kind {
            TransformKind::ToTensor => &[],
            TransformKind::Normalize => &["mean", "std"],
            TransformKind::RandomCrop => &["size", "padding"],
            TransformKind::RandomHorizontalFlip => &["p"],
            TransformKind::RandomRotation => &["degrees"],
            TransformKind::ColorJitter => &["brightness", "contrast", "saturation", "hue"],
            TransformKind::RandAugment => &["num_ops", "magnitude"],
            TransformKind::CutOut => &["size"],
        }
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.params.get(key).and_then(ParamValue::as_number)
    }

    pub fn list(&self, key: &str) -> Option<&[f64]> {
        self.params.get(key).and_then(ParamValue::as_list)
    }

    /// Range and shape checks that do not depend on the image shape.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let allowed = Self::allowed_params(self.kind);
        for (k, v) in &self.params {
            if !allowed.contains(&k.as_str()) {
                return Err(format!(
                    "{}: unknown parameter `{k}` (allowed: {})",
                    self.kind,
                    if allowed.is_empty() {
                        "none".to_string()
                    } else {
                        allowed.join(", ")
                    }
                ));
            }
            let is_list = matches!(v, ParamValue::List(_));
            let wants_list = matches!(k.as_str(), "mean" | "std");
            if is_list != wants_list {
                return Err(format!(
                    "{}.{k}: expected {}",
                    self.kind,
                    if wants_list { "a list of numbers" } else { "a number" }
                ));
            }
        }
        let num = |k: &str| self.number(k);
        let check = |k: &str, ok: fn(f64) -> bool, what: &str| -> std::result::Result<(), String> {
            match num(k) {
                Some(v) if !v.is_finite() || !ok(v) => Err(format!("{}.{k} = {v}: must be {what}", self.kind)),
                _ => Ok(()),
            }
        };
        match self.kind {
            TransformKind::ToTensor => {}
            TransformKind::Normalize => {
                let mean = self
                    .list("mean")
                    .ok_or_else(|| "Normalize: missing field: params.mean".to_string())?;
                let std = self
                    .list("std")
                    .ok_or_else(|| "Normalize: missing field: params.std".to_string())?;
                if mean.is_empty() || mean.len() != std.len() {
                    return Err(format!(
                        "Normalize: mean ({}) and std ({}) must be non-empty and of equal length",
                        mean.len(),
                        std.len()
                    ));
                }
                if let Some(s) = std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                    return Err(format!("Normalize: std entries must be > 0 (got {s})"));
                }
                if let Some(m) = mean.iter().find(|m| !(0.0..=1.0).contains(*m)) {
                    return Err(format!("Normalize: mean entries must lie in [0, 1] (got {m})"));
                }
            }
            TransformKind::RandomCrop => {
                check("size", |v| v >= 1.0 && v.fract() == 0.0, "a positive integer")?;
                check("padding", |v| v >= 0.0 && v.fract() == 0.0, "a non-negative integer")?;
            }
            TransformKind::RandomHorizontalFlip => check("p", |v| (0.0..=1.0).contains(&v), "in [0, 1]")?,
            TransformKind::RandomRotation => check("degrees", |v| (0.0..=180.0).contains(&v), "in [0, 180]")?,
            TransformKind::ColorJitter => {
                for k in ["brightness", "contrast", "saturation"] {
                    check(k, |v| v >= 0.0, "non-negative")?;
                }
                check("hue", |v| (0.0..=0.5).contains(&v), "in [0, 0.5]")?;
            }
            TransformKind::RandAugment => {
                check("num_ops", |v| v >= 0.0 && v.fract() == 0.0, "a non-negative integer")?;
                check("magnitude", |v| (0.0..=30.0).contains(&v), "in [0, 30]")?;
            }
            TransformKind::CutOut => check("size", |v| v >= 1.0 && v.fract() == 0.0, "a positive integer")?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub batch_size: usize,
    pub num_workers: usize,
    pub shuffle: bool,
    /// Applied in listed order.
    pub transforms: Vec<TransformSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: SplitConfig,
    pub validation: SplitConfig,
    pub test: SplitConfig,
}

impl Splits {
    pub fn get(&self, split: Split) -> &SplitConfig {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut SplitConfig {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// SGD only.
    pub momentum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerSpec {
    pub kind: SchedulerKind,
    pub t_max: Option<u32>,
    pub eta_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub loss: LossKind,
    pub grouping_volatility: f64,
    pub optimizer: OptimizerSpec,
    pub lr_scheduler: SchedulerSpec,
    pub epochs: u32,
    pub norm: NormMode,
}

named_enum!(SyntheticLayout {
    Independent => "independent",
    Paired => "paired",
});

/// Parameters of the built-in Gaussian-blob dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_categories: usize,
    pub channels: usize,
    pub side: usize,
    pub train_per_category: usize,
    pub test_per_category: usize,
    /// Per-pixel Gaussian noise standard deviation, in [0,1] intensity units.
    pub noise: f64,
    #[serde(default = "default_layout")]
    pub layout: SyntheticLayout,
    /// Colour distance between the two members of a pair (paired layout).
    #[serde(default)]
    pub pair_offset: f64,
}

fn default_layout() -> SyntheticLayout {
    SyntheticLayout::Independent
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Serial execution and seeded streams everywhere; runs on one device are
    /// bit-identical when this is on.
    pub deterministic: bool,
    /// Supplied either in the file (`dataset.name`) or on the command line.
    pub dataset: Option<DatasetName>,
    pub synthetic: Option<SyntheticSpec>,
    pub model_backbone: Option<Backbone>,
    pub output_dir: PathBuf,
    pub splits: Splits,
    pub training: TrainSpec,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for split in Split::ALL {
            let s = self.splits.get(*split);
            if s.batch_size == 0 {
                return bad(format!("splits.{split}.batch_size must be >= 1"));
            }
            for t in &s.transforms {
                t.validate()
                    .map_err(|m| Error::InvalidConfig(format!("splits.{split}.transform: {m}")))?;
            }
        }
        let t = &self.training;
        if !(t.grouping_volatility.is_finite() && t.grouping_volatility > 0.0) {
            return bad(format!(
                "grouping_volatility must be > 0 (got {})",
                t.grouping_volatility
            ));
        }
        if t.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(t.optimizer.lr.is_finite() && t.optimizer.lr > 0.0) {
            return bad(format!("optimizer lr must be > 0 (got {})", t.optimizer.lr));
        }
        if !(t.optimizer.weight_decay.is_finite() && t.optimizer.weight_decay >= 0.0) {
            return bad(format!(
                "optimizer weight_decay must be >= 0 (got {})",
                t.optimizer.weight_decay
            ));
        }
        match t.optimizer.kind {
            OptimizerKind::Sgd => match t.optimizer.momentum {
                Some(m) if (0.0..1.0).contains(&m) => {}
                Some(m) => return bad(format!("SGD momentum must be in [0, 1) (got {m})")),
                None => return bad("missing field: optimizer.params.momentum".into()),
            },
            _ if t.optimizer.momentum.is_some() => {
                return bad(format!("{} does not take a momentum parameter", t.optimizer.kind))
            }
            _ => {}
        }
        match t.lr_scheduler.kind {
            SchedulerKind::CosineAnnealingLr => {
                match t.lr_scheduler.t_max {
                    Some(v) if v >= 1 => {}
                    Some(_) => return bad("lr_scheduler T_max must be >= 1".into()),
                    None => return bad("missing field: lr_scheduler.params.T_max".into()),
                }
                match t.lr_scheduler.eta_min {
                    Some(v) if v.is_finite() && v >= 0.0 => {}
                    Some(v) => return bad(format!("lr_scheduler eta_min must be >= 0 (got {v})")),
                    None => return bad("missing field: lr_scheduler.params.eta_min".into()),
                }
            }
            SchedulerKind::Constant => {
                if t.lr_scheduler.t_max.is_some() || t.lr_scheduler.eta_min.is_some() {
                    return bad("ConstantLR takes no parameters".into());
                }
            }
        }
        if self.dataset == Some(DatasetName::Synthetic) && self.synthetic.is_none() {
            return bad("missing field: dataset.synthetic (required for the synthetic dataset)".into());
        }
        if let Some(s) = &self.synthetic {
            if s.num_categories == 0 || s.channels == 0 || s.side == 0 {
                return bad("dataset.synthetic: num_categories, channels and side must be >= 1".into());
            }
            if s.train_per_category == 0 || s.test_per_category == 0 {
                return bad("dataset.synthetic: per-category counts must be >= 1".into());
            }
            if !(s.noise.is_finite() && s.noise >= 0.0) || !(s.pair_offset.is_finite() && s.pair_offset >= 0.0) {
                return bad("dataset.synthetic: noise and pair_offset must be finite and >= 0".into());
            }
            if s.layout == SyntheticLayout::Paired && s.num_categories % 2 != 0 {
                return bad("dataset.synthetic: paired layout needs an even number of categories".into());
            }
        }
        Ok(())
    }

    /// Parse from YAML text. `origin` names the source in diagnostics.
    pub fn from_yaml_str(text: &str, origin: &str) -> Result<Self> {
        let config = doc::parse(text, origin)?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical YAML serialization (deterministic for equal configs).
    pub fn to_yaml_string(&self) -> String {
        doc::render(self)
    }

    /// SHA-256 over the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_yaml_string().as_bytes()))
    }

    /// Dataset name, or a validation error telling the caller how to supply it.
    pub fn dataset_name(&self) -> Result<DatasetName> {
        self.dataset.ok_or_else(|| {
            Error::InvalidConfig("missing field: dataset.name (set it in the config or pass --dataset)".into())
        })
    }

    pub fn backbone(&self) -> Result<Backbone> {
        self.model_backbone.ok_or_else(|| {
            Error::InvalidConfig("missing field: model_backbone (set it in the config or pass --model_backbone)".into())
        })
    }
}

/// Load and validate a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fsx::read_to_string(path)?;
    ExperimentConfig::from_yaml_str(&text, &path.display().to_string())
}

/// Reference configuration shipped for `name`.
pub fn shipped_config(name: DatasetName) -> ExperimentConfig {
    let text = match name {
        DatasetName::Emnist => include_str!("../../configs/emnist.yaml"),
        DatasetName::Cifar10 => include_str!("../../configs/cifar10.yaml"),
        DatasetName::Svhn => include_str!("../../configs/svhn.yaml"),
        DatasetName::Synthetic => include_str!("../../configs/synthetic.yaml"),
    };
    ExperimentConfig::from_yaml_str(text, &format!("configs/{}.yaml", name.as_str())).expect("shipped configs parse")
}

pub fn save_config(config: &ExperimentConfig, path: impl AsRef<Path>) -> Result<()> {
    config.validate()?;
    fsx::write(path.as_ref(), config.to_yaml_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTINGS: &str = include_str!("../../configs/svhn.yaml");

    #[test]
    fn shipped_values_parse_exactly() {
        let c = ExperimentConfig::from_yaml_str(LISTINGS, "svhn.yaml").unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.splits.train.batch_size, 16);
        assert_eq!(c.splits.validation.batch_size, 16);
        assert_eq!(c.splits.test.batch_size, 1);
        assert_eq!(c.splits.train.num_workers, 2);
        assert!(c.splits.test.shuffle);
        assert_eq!(c.training.grouping_volatility, 0.70);
        assert_eq!(c.training.epochs, 20);
        assert_eq!(c.training.loss, LossKind::NllLoss);
        assert_eq!(c.training.optimizer.kind, OptimizerKind::Adam);
        assert_eq!(c.training.optimizer.lr, 0.005);
        assert_eq!(c.training.optimizer.weight_decay, 0.0005);
        assert_eq!(c.training.lr_scheduler.kind, SchedulerKind::CosineAnnealingLr);
        assert_eq!(c.training.lr_scheduler.t_max, Some(10));
        assert_eq!(c.training.lr_scheduler.eta_min, Some(0.0));
        assert_eq!(
            c.splits.train.transforms,
            vec![
                TransformSpec::new(TransformKind::ToTensor),
                TransformSpec::normalize(&[0.5; 3], &[0.5; 3])
            ]
        );
        assert!(c.splits.test.transforms.is_empty());
    }

    #[test]
    fn missing_seed_is_named() {
        let text: String = LISTINGS
            .lines()
            .filter(|l| !l.starts_with("seed:"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = ExperimentConfig::from_yaml_str(&text, "x.yaml").unwrap_err();
        assert!(err.to_string().contains("missing field: seed"), "{err}");
    }

    #[test]
    fn missing_hyperparameters_are_named() {
        for key in ["grouping_volatility:", "epochs:"] {
            let text: String = LISTINGS
                .lines()
                .filter(|l| !l.starts_with(key))
                .map(|l| format!("{l}\n"))
                .collect();
            let err = ExperimentConfig::from_yaml_str(&text, "x.yaml").unwrap_err();
            let field = key.trim_end_matches(':');
            assert!(err.to_string().contains(&format!("missing field: {field}")), "{err}");
        }
    }

    #[test]
    fn unknown_transform_kind_rejected() {
        let text = LISTINGS.replacen("type: ToTensor", "type: Sharpen", 1);
        let err = ExperimentConfig::from_yaml_str(&text, "x.yaml").unwrap_err();
        assert!(err.to_string().contains("Sharpen"), "{err}");
    }

    #[test]
    fn malformed_yaml_reports_line() {
        let err = ExperimentConfig::from_yaml_str("seed: 42\ndataset: [\n  - : :\n", "bad.yaml").unwrap_err();
        match err {
            Error::MalformedConfig { line, .. } => assert!(line.is_some()),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn normalize_rejects_non_positive_std() {
        let t = TransformSpec::normalize(&[0.5, 0.5, 0.5], &[0.5, 0.0, 0.5]);
        assert!(t.validate().unwrap_err().contains("std"));
        let t = TransformSpec::normalize(&[0.5, 0.5], &[0.5, 0.5, 0.5]);
        assert!(t.validate().is_err());
    }

    #[test]
    fn save_is_byte_deterministic_and_round_trips() {
        let c = ExperimentConfig::from_yaml_str(LISTINGS, "svhn.yaml").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.yaml"), dir.path().join("b.yaml"));
        save_config(&c, &a).unwrap();
        save_config(&c, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let back = load_config(&a).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.training.grouping_volatility, 0.70);
    }

    #[test]
    fn save_to_unwritable_location_fails() {
        let c = ExperimentConfig::from_yaml_str(LISTINGS, "svhn.yaml").unwrap();
        let err = save_config(&c, "/proc/definitely/not/here.yaml").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
