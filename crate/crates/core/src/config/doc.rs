//! YAML document layout and its mapping to [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use super::*;

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deterministic: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_backbone: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<DatasetDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<Vec<TypedDoc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grouping_volatility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_scheduler: Option<Vec<TypedDoc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<Vec<TypedDoc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    norm: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    synthetic: Option<SyntheticSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<SplitDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<SplitDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<SplitDoc>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<SplitParamsDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transform: Option<Vec<TypedDoc>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitParamsDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shuffle: Option<bool>,
}

/// `- type: X` entry with an optional `params` map.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TypedDoc {
    #[serde(rename = "type")]
    kind: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: BTreeMap<String, Value>,
}

fn missing(field: &str) -> Error {
    Error::InvalidConfig(format!("missing field: {field}"))
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{field}: {msg}"))
}

pub(super) fn parse(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let doc: ConfigDoc = serde_yaml::from_str(text).map_err(|e| Error::MalformedConfig {
        path: origin.to_string(),
        line: e.location().map(|l| l.line()),
        message: e.to_string(),
    })?;
    from_doc(doc)
}

fn parse_enum<T: FromStr<Err = String>>(field: &str, text: &str) -> Result<T> {
    text.parse().map_err(|m: String| invalid(field, m))
}

fn single<'a>(field: &str, list: &'a Option<Vec<TypedDoc>>) -> Result<&'a TypedDoc> {
    match list.as_deref() {
        None | Some([]) => Err(missing(field)),
        Some([one]) => Ok(one),
        Some(_) => Err(invalid(field, "exactly one entry is supported")),
    }
}

fn kind_of<'a>(field: &str, t: &'a TypedDoc) -> Result<&'a str> {
    t.kind.as_deref().ok_or_else(|| missing(&format!("{field}.type")))
}

fn number(field: &str, params: &BTreeMap<String, Value>, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| invalid(&format!("{field}.params.{key}"), "expected a number")),
    }
}

fn reject_unknown(field: &str, params: &BTreeMap<String, Value>, allowed: &[&str]) -> Result<()> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(invalid(
            &format!("{field}.params"),
            format!("unknown key `{k}` (allowed: {})", allowed.join(", ")),
        )),
        None => Ok(()),
    }
}

fn split_from_doc(name: &str, doc: Option<SplitDoc>) -> Result<SplitConfig> {
    let base = format!("dataset.{name}");
    let doc = doc.ok_or_else(|| missing(&base))?;
    let params = doc.params.ok_or_else(|| missing(&format!("{base}.params")))?;
    let transforms = doc
        .transform
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let field = format!("{base}.transform[{i}]");
            let kind: TransformKind = parse_enum(&field, kind_of(&field, &t)?)?;
            let mut spec = TransformSpec::new(kind);
            for (k, v) in t.params {
                let value: ParamValue = serde_yaml::from_value(v)
                    .map_err(|_| invalid(&format!("{field}.params.{k}"), "expected a number or list of numbers"))?;
                spec.params.insert(k, value);
            }
            spec.validate().map_err(|m| invalid(&field, m))?;
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitConfig {
        batch_size: params
            .batch_size
            .ok_or_else(|| missing(&format!("{base}.params.batch_size")))?,
        num_workers: params
            .num_workers
            .ok_or_else(|| missing(&format!("{base}.params.num_workers")))?,
        shuffle: params
            .shuffle
            .ok_or_else(|| missing(&format!("{base}.params.shuffle")))?,
        transforms,
    })
}

fn from_doc(doc: ConfigDoc) -> Result<ExperimentConfig> {
    let seed = doc.seed.ok_or_else(|| missing("seed"))?;
    let ds = doc.dataset.ok_or_else(|| missing("dataset"))?;
    let dataset = ds
        .name
        .as_deref()
        .map(|n| parse_enum::<DatasetName>("dataset.name", n))
        .transpose()?;
    let model_backbone = doc
        .model_backbone
        .as_deref()
        .map(|b| parse_enum::<Backbone>("model_backbone", b))
        .transpose()?;
    let splits = Splits {
        train: split_from_doc("train", ds.train)?,
        validation: split_from_doc("validation", ds.validation)?,
        test: split_from_doc("test", ds.test)?,
    };

    let loss_doc = single("loss", &doc.loss)?;
    let loss: LossKind = parse_enum("loss.type", kind_of("loss", loss_doc)?)?;
    reject_unknown("loss", &loss_doc.params, &[])?;

    let grouping_volatility = doc.grouping_volatility.ok_or_else(|| missing("grouping_volatility"))?;

    let opt = single("optimizer", &doc.optimizer)?;
    let opt_kind: OptimizerKind = parse_enum("optimizer.type", kind_of("optimizer", opt)?)?;
    reject_unknown("optimizer", &opt.params, &["lr", "weight_decay", "momentum"])?;
    let optimizer = OptimizerSpec {
        kind: opt_kind,
        lr: number("optimizer", &opt.params, "lr")?.ok_or_else(|| missing("optimizer.params.lr"))?,
        weight_decay: number("optimizer", &opt.params, "weight_decay")?
            .ok_or_else(|| missing("optimizer.params.weight_decay"))?,
        momentum: number("optimizer", &opt.params, "momentum")?,
    };

    let sched = single("lr_scheduler", &doc.lr_scheduler)?;
    let sched_kind: SchedulerKind = parse_enum("lr_scheduler.type", kind_of("lr_scheduler", sched)?)?;
    reject_unknown("lr_scheduler", &sched.params, &["T_max", "eta_min"])?;
    let t_max = match number("lr_scheduler", &sched.params, "T_max")? {
        None => None,
        Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Some(v as u32),
        Some(v) => {
            return Err(invalid(
                "lr_scheduler.params.T_max",
                format!("expected a positive integer, got {v}"),
            ))
        }
    };
    let lr_scheduler = SchedulerSpec {
        kind: sched_kind,
        t_max,
        eta_min: number("lr_scheduler", &sched.params, "eta_min")?,
    };

    let epochs = doc.epochs.ok_or_else(|| missing("epochs"))?;
    let norm = match doc.norm.as_deref() {
        Some(n) => parse_enum("norm", n)?,
        None => NormMode::Batch,
    };

    Ok(ExperimentConfig {
        seed,
        deterministic: doc.deterministic.unwrap_or(true),
        dataset,
        synthetic: ds.synthetic,
        model_backbone,
        output_dir: doc.output_dir.unwrap_or_else(|| PathBuf::from("runs")),
        splits,
        training: TrainSpec {
            loss,
            grouping_volatility,
            optimizer,
            lr_scheduler,
            epochs,
            norm,
        },
    })
}

fn typed(kind: &str, params: Vec<(&str, Value)>) -> Vec<TypedDoc> {
    vec![TypedDoc {
        kind: Some(kind.to_string()),
        params: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }]
}

fn split_to_doc(s: &SplitConfig) -> SplitDoc {
    SplitDoc {
        params: Some(SplitParamsDoc {
            batch_size: Some(s.batch_size),
            num_workers: Some(s.num_workers),
            shuffle: Some(s.shuffle),
        }),
        transform: if s.transforms.is_empty() {
            None
        } else {
            Some(
                s.transforms
                    .iter()
                    .map(|t| TypedDoc {
                        kind: Some(t.kind.to_string()),
                        params: t
                            .params
                            .iter()
                            .map(|(k, v)| (k.clone(), serde_yaml::to_value(v).expect("plain numbers serialize")))
                            .collect(),
                    })
                    .collect(),
            )
        },
    }
}

pub(super) fn render(c: &ExperimentConfig) -> String {
    let t = &c.training;
    let mut opt_params = vec![
        ("lr", Value::from(t.optimizer.lr)),
        ("weight_decay", Value::from(t.optimizer.weight_decay)),
    ];
    if let Some(m) = t.optimizer.momentum {
        opt_params.push(("momentum", Value::from(m)));
    }
    let mut sched_params = Vec::new();
    if let Some(v) = t.lr_scheduler.t_max {
        sched_params.push(("T_max", Value::from(v)));
    }
    if let Some(v) = t.lr_scheduler.eta_min {
        sched_params.push(("eta_min", Value::from(v)));
    }
    let doc = ConfigDoc {
        seed: Some(c.seed),
        deterministic: Some(c.deterministic),
        model_backbone: c.model_backbone.map(|b| b.to_string()),
        output_dir: Some(c.output_dir.clone()),
        dataset: Some(DatasetDoc {
            name: c.dataset.map(|d| d.to_string()),
            synthetic: c.synthetic.clone(),
            train: Some(split_to_doc(&c.splits.train)),
            validation: Some(split_to_doc(&c.splits.validation)),
            test: Some(split_to_doc(&c.splits.test)),
        }),
        loss: Some(typed(t.loss.as_str(), vec![])),
        grouping_volatility: Some(t.grouping_volatility),
        lr_scheduler: Some(typed(t.lr_scheduler.kind.as_str(), sched_params)),
        optimizer: Some(typed(t.optimizer.kind.as_str(), opt_params)),
        epochs: Some(t.epochs),
        norm: Some(t.norm.to_string()),
    };
    serde_yaml::to_string(&doc).expect("config document serializes")
}
