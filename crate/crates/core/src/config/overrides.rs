//! Dotted-path `key=value` overrides.
//!
//! Keys use the logical layout of [`ExperimentConfig`]
//! (`training.grouping_volatility`, `splits.train.batch_size`). The YAML
//! spellings (`grouping_volatility`, `dataset.train.params.batch_size`) are
//! accepted as aliases.

use std::collections::BTreeMap;
use std::str::FromStr;

use super::*;

const SPLIT_FIELDS: &[&str] = &["batch_size", "num_workers", "shuffle"];

const SCALAR_KEYS: &[&str] = &[
    "seed",
    "deterministic",
    "dataset",
    "model_backbone",
    "output_dir",
    "training.loss",
    "training.grouping_volatility",
    "training.optimizer",
    "training.lr",
    "training.weight_decay",
    "training.momentum",
    "training.lr_scheduler",
    "training.t_max",
    "training.eta_min",
    "training.epochs",
    "training.norm",
];

/// Every key `apply_overrides` understands, in canonical spelling.
pub fn override_keys() -> Vec<String> {
    let mut keys: Vec<String> = SCALAR_KEYS.iter().map(|s| s.to_string()).collect();
    for split in Split::ALL {
        for f in SPLIT_FIELDS {
            keys.push(format!("splits.{split}.{f}"));
        }
    }
    keys
}

fn canonical_key(key: &str) -> String {
    let aliases: &[(&str, &str)] = &[
        ("grouping_volatility", "training.grouping_volatility"),
        ("epochs", "training.epochs"),
        ("loss", "training.loss"),
        ("norm", "training.norm"),
        ("dataset.name", "dataset"),
        ("optimizer.type", "training.optimizer"),
        ("optimizer.params.lr", "training.lr"),
        ("optimizer.params.weight_decay", "training.weight_decay"),
        ("optimizer.params.momentum", "training.momentum"),
        ("lr_scheduler.type", "training.lr_scheduler"),
        ("lr_scheduler.params.T_max", "training.t_max"),
        ("lr_scheduler.params.eta_min", "training.eta_min"),
    ];
    if let Some((_, to)) = aliases.iter().find(|(from, _)| *from == key) {
        return to.to_string();
    }
    // dataset.<split>.params.<field> -> splits.<split>.<field>
    let parts: Vec<&str> = key.split('.').collect();
    if let ["dataset", split, "params", field] = parts.as_slice() {
        return format!("splits.{split}.{field}");
    }
    key.to_string()
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::OverrideValue {
        key: key.to_string(),
        message: format!("expected {what}, got `{value}`"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "True" | "TRUE" => Ok(true),
        "false" | "False" | "FALSE" => Ok(false),
        other => Err(Error::OverrideValue {
            key: key.to_string(),
            message: format!("expected a boolean, got `{other}`"),
        }),
    }
}

fn parse_named<T: FromStr<Err = String>>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|m| Error::OverrideValue {
        key: key.to_string(),
        message: m,
    })
}

fn apply_one(c: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let t = &mut c.training;
    match key {
        "seed" => c.seed = parse(key, value, "a non-negative integer")?,
        "deterministic" => c.deterministic = parse_bool(key, value)?,
        "dataset" => c.dataset = Some(parse_named(key, value)?),
        "model_backbone" => c.model_backbone = Some(parse_named(key, value)?),
        "output_dir" => c.output_dir = PathBuf::from(value.trim()),
        "training.loss" => t.loss = parse_named(key, value)?,
        "training.grouping_volatility" => t.grouping_volatility = parse(key, value, "a real number")?,
        "training.optimizer" => t.optimizer.kind = parse_named(key, value)?,
        "training.lr" => t.optimizer.lr = parse(key, value, "a real number")?,
        "training.weight_decay" => t.optimizer.weight_decay = parse(key, value, "a real number")?,
        "training.momentum" => t.optimizer.momentum = Some(parse(key, value, "a real number")?),
        "training.lr_scheduler" => t.lr_scheduler.kind = parse_named(key, value)?,
        "training.t_max" => t.lr_scheduler.t_max = Some(parse(key, value, "a positive integer")?),
        "training.eta_min" => t.lr_scheduler.eta_min = Some(parse(key, value, "a real number")?),
        "training.epochs" => t.epochs = parse(key, value, "a positive integer")?,
        "training.norm" => t.norm = parse_named(key, value)?,
        _ => {
            let parts: Vec<&str> = key.split('.').collect();
            let (split, field) = match parts.as_slice() {
                ["splits", split, field] if SPLIT_FIELDS.contains(field) => match split.parse::<Split>() {
                    Ok(s) => (s, *field),
                    Err(_) => return Err(unknown(key)),
                },
                _ => return Err(unknown(key)),
            };
            let s = c.splits.get_mut(split);
            match field {
                "batch_size" => s.batch_size = parse(key, value, "a positive integer")?,
                "num_workers" => s.num_workers = parse(key, value, "a non-negative integer")?,
                "shuffle" => s.shuffle = parse_bool(key, value)?,
                _ => unreachable!(),
            }
        }
    }
    Ok(())
}

fn unknown(key: &str) -> Error {
    Error::UnknownOverrideKey {
        key: key.to_string(),
        valid: override_keys(),
    }
}

/// Apply `key=value` overrides to a copy of `config` and re-validate it.
pub fn apply_overrides<S: AsRef<str>>(config: &ExperimentConfig, overrides: &[S]) -> Result<ExperimentConfig> {
    let mut out = config.clone();
    for item in overrides {
        let item = item.as_ref();
        let (key, value) = item.split_once('=').ok_or_else(|| Error::OverrideValue {
            key: item.to_string(),
            message: "expected key=value".into(),
        })?;
        apply_one(&mut out, &canonical_key(key.trim()), value)?;
    }
    out.validate()?;
    Ok(out)
}

/// Flatten a config to `key -> rendered value` pairs, used for digest diffs.
pub fn flatten(c: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    let t = &c.training;
    put("seed", c.seed.to_string());
    put("deterministic", c.deterministic.to_string());
    put("dataset", c.dataset.map(|d| d.to_string()).unwrap_or_default());
    put(
        "model_backbone",
        c.model_backbone.map(|d| d.to_string()).unwrap_or_default(),
    );
    put("output_dir", c.output_dir.display().to_string());
    put("training.loss", t.loss.to_string());
    put("training.grouping_volatility", t.grouping_volatility.to_string());
    put("training.optimizer", t.optimizer.kind.to_string());
    put("training.lr", t.optimizer.lr.to_string());
    put("training.weight_decay", t.optimizer.weight_decay.to_string());
    put("training.momentum", format!("{:?}", t.optimizer.momentum));
    put("training.lr_scheduler", t.lr_scheduler.kind.to_string());
    put("training.t_max", format!("{:?}", t.lr_scheduler.t_max));
    put("training.eta_min", format!("{:?}", t.lr_scheduler.eta_min));
    put("training.epochs", t.epochs.to_string());
    put("training.norm", t.norm.to_string());
    put("dataset.synthetic", format!("{:?}", c.synthetic));
    for split in Split::ALL {
        let s = c.splits.get(*split);
        put(&format!("splits.{split}.batch_size"), s.batch_size.to_string());
        put(&format!("splits.{split}.num_workers"), s.num_workers.to_string());
        put(&format!("splits.{split}.shuffle"), s.shuffle.to_string());
        put(&format!("splits.{split}.transforms"), format!("{:?}", s.transforms));
    }
    m
}
