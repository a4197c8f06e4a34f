//! One-parameter sensitivity sweeps with tree-structure tracking.
//!
//! Each point overrides one config key, builds and evaluates in its own
//! directory and appends a record to `records.jsonl`. Records are never
//! rewritten, so an interrupted sweep resumes at the first missing point
//! with earlier records byte-identical.
//!
//! ```text
//! <sweep_dir>/
//!   sweep.json  records.jsonl  sweep.csv  sweep.svg  manifest.json
//!   points/<i>/  (a build directory, plus eval.json or error.txt)
//! ```

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::{apply_overrides, regimes, ExperimentConfig};
use crate::error::{fsx, Error, Result};
use crate::evaluator::{evaluate_build, EVAL_FILE};
use crate::provenance;
use crate::seed::SeedSource;
use crate::sim::gv_range;
use crate::trainer::{build_and_train, BuildOptions};
use crate::tree::fingerprint;

pub const SPEC_FILE: &str = "sweep.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const CSV_FILE: &str = "sweep.csv";
pub const PLOT_FILE: &str = "sweep.svg";
pub const POINTS_DIR: &str = "points";
pub const CSV_COLUMNS: [&str; 7] = [
    "value",
    "accuracy",
    "fingerprint",
    "depth",
    "mean_groups_per_node",
    "seed",
    "status",
];
/// Sweep key that applies one of the TR1-TR6 training regimes.
pub const REGIME_KEY: &str = "regime";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepValues {
    List(Vec<String>),
    Range { start: f64, stop: f64, step: f64 },
}

impl SweepValues {
    pub fn expand(&self) -> Vec<String> {
        match self {
            SweepValues::List(v) => v.clone(),
            SweepValues::Range { start, stop, step } => {
                gv_range(*start, *stop, *step).iter().map(|v| v.to_string()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base_config: ExperimentConfig,
    pub parameter: String,
    pub values: SweepValues,
    pub repeats: usize,
}

/// On-disk form of a [`SweepSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpecFile {
    parameter: String,
    values: SweepValues,
    repeats: usize,
    points: Vec<String>,
    base_config_digest: String,
    base_config: String,
}

impl SweepSpec {
    pub fn new(base_config: ExperimentConfig, parameter: impl Into<String>, values: SweepValues) -> Self {
        Self {
            base_config,
            parameter: parameter.into(),
            values,
            repeats: 1,
        }
    }

    /// Check the spec and that every point yields a valid config.
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Sweep("repeats must be >= 1".into()));
        }
        if let SweepValues::Range { start, stop, step } = self.values {
            if !(step > 0.0 && start <= stop && start.is_finite() && stop.is_finite()) {
                return Err(Error::Sweep(format!("bad range ({start}, {stop}, {step})")));
            }
        }
        let values = self.values.expand();
        if values.is_empty() {
            return Err(Error::Sweep("no values to sweep".into()));
        }
        for v in &values {
            self.config_for(v, 0)?;
        }
        Ok(())
    }

    /// `(value, repeat)` for every point, in run order.
    pub fn points(&self) -> Vec<(String, usize)> {
        self.values
            .expand()
            .into_iter()
            .flat_map(|v| (0..self.repeats).map(move |r| (v.clone(), r)))
            .collect()
    }

    /// Base config with `value` applied. Repeats after the first get a
    /// derived seed unless the base config is deterministic.
    pub fn config_for(&self, value: &str, repeat: usize) -> Result<ExperimentConfig> {
        let mut c = if self.parameter == REGIME_KEY {
            let id: u8 = value
                .trim_start_matches("TR")
                .parse()
                .map_err(|_| Error::Sweep(format!("unknown regime {value:?}")))?;
            regimes::regime(id)
                .ok_or_else(|| Error::Sweep(format!("unknown regime {value:?}")))?
                .apply(&self.base_config)?
        } else {
            apply_overrides(&self.base_config, &[format!("{}={value}", self.parameter)])?
        };
        if repeat > 0 && !c.deterministic {
            c.seed = SeedSource::new(c.seed).derive(&format!("repeat/{repeat}"));
        }
        Ok(c)
    }

    fn file(&self) -> SpecFile {
        SpecFile {
            parameter: self.parameter.clone(),
            values: self.values.clone(),
            repeats: self.repeats,
            points: self.points().into_iter().map(|(v, _)| v).collect(),
            base_config_digest: self.base_config.digest(),
            base_config: self.base_config.to_yaml_string(),
        }
    }

    /// Load the spec stored in a sweep directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let f: SpecFile = serde_json::from_str(&fsx::read_to_string(&dir.join(SPEC_FILE))?)?;
        Ok(Self {
            base_config: ExperimentConfig::from_yaml_str(&f.base_config, SPEC_FILE)?,
            parameter: f.parameter,
            values: f.values,
            repeats: f.repeats,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub value: String,
    pub accuracy: Option<f64>,
    pub fingerprint: Option<String>,
    pub depth: Option<usize>,
    pub mean_groups_per_node: Option<f64>,
    pub seed: u64,
    /// `ok` or `failed`; diagnostics of a failure are in the point's `error.txt`.
    pub status: String,
    pub build_dir: PathBuf,
}

impl SweepRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub build: BuildOptions,
    /// Stop with [`Error::Interrupted`] after this many points complete in
    /// this invocation.
    pub stop_after_points: Option<usize>,
}

pub fn read_records(dir: &Path) -> Result<Vec<SweepRecord>> {
    let path = dir.join(RECORDS_FILE);
    if !path.exists() {
        return Ok(vec![]);
    }
    fsx::read_to_string(&path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn append_record(dir: &Path, r: &SweepRecord) -> Result<()> {
    let path = dir.join(RECORDS_FILE);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(&path, e))?;
    f.sync_all().map_err(|e| Error::io(&path, e))
}

fn run_point(
    spec: &SweepSpec,
    value: &str,
    repeat: usize,
    point_dir: &Path,
    opts: &SweepOptions,
) -> Result<SweepRecord> {
    let config = spec.config_for(value, repeat)?;
    let report = build_and_train(&config, point_dir, &opts.build)?;
    let eval = evaluate_build(&config, point_dir, &opts.build.data_root, &opts.build.load)?;
    eval.save(&point_dir.join(EVAL_FILE))?;
    Ok(SweepRecord {
        value: value.into(),
        accuracy: Some(eval.accuracy),
        fingerprint: Some(fingerprint(&report.tree)?),
        depth: Some(report.tree.depth()),
        mean_groups_per_node: Some(report.tree.mean_groups_per_node()),
        seed: config.seed,
        status: "ok".into(),
        build_dir: point_dir.to_path_buf(),
    })
}

/// Run (or resume) the sweep in `dir`. A failing point is recorded as
/// failed and the sweep moves on.
pub fn run_sweep(spec: &SweepSpec, dir: &Path, opts: &SweepOptions) -> Result<Vec<SweepRecord>> {
    spec.validate()?;
    fsx::create_dir_all(&dir.join(POINTS_DIR))?;
    let spec_path = dir.join(SPEC_FILE);
    let file = spec.file();
    if spec_path.exists() {
        let stored: SpecFile = serde_json::from_str(&fsx::read_to_string(&spec_path)?)?;
        if stored != file {
            return Err(Error::Sweep(format!("{} holds a different sweep", dir.display())));
        }
    } else {
        fsx::write_atomic(&spec_path, serde_json::to_string_pretty(&file)?.as_bytes())?;
        provenance::capture(&spec.base_config).save(dir)?;
    }
    let mut records = read_records(dir)?;
    let points = spec.points();
    if records.len() > points.len() {
        return Err(Error::Sweep(format!("{} has more records than points", RECORDS_FILE)));
    }
    for (done_now, (i, (value, repeat))) in points.iter().enumerate().skip(records.len()).enumerate() {
        if opts.stop_after_points == Some(done_now) {
            return Err(Error::Interrupted { completed: done_now });
        }
        let point_dir = dir.join(POINTS_DIR).join(i.to_string());
        fsx::create_dir_all(&point_dir)?;
        let record = match run_point(spec, value, *repeat, &point_dir, opts) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("sweep point {i} ({}={value}) failed: {e}", spec.parameter);
                fsx::write(&point_dir.join("error.txt"), format!("{e}\n"))?;
                SweepRecord {
                    value: value.clone(),
                    accuracy: None,
                    fingerprint: None,
                    depth: None,
                    mean_groups_per_node: None,
                    seed: spec
                        .config_for(value, *repeat)
                        .map(|c| c.seed)
                        .unwrap_or(spec.base_config.seed),
                    status: "failed".into(),
                    build_dir: point_dir,
                }
            }
        };
        append_record(dir, &record)?;
        records.push(record);
    }
    emit_csv(&records, &dir.join(CSV_FILE))?;
    if records.iter().any(SweepRecord::ok) {
        emit_plot(&records, &dir.join(PLOT_FILE), &spec.parameter)?;
    }
    Ok(records)
}

/// Fingerprint to the swept values that produced it, in record order.
pub fn distinct_trees(records: &[SweepRecord]) -> IndexMap<String, Vec<String>> {
    let mut out: IndexMap<String, Vec<String>> = IndexMap::new();
    for r in records {
        if let Some(f) = &r.fingerprint {
            out.entry(f.clone()).or_default().push(r.value.clone());
        }
    }
    out
}

fn cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

pub fn emit_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record([
            r.value.clone(),
            cell(&r.accuracy),
            cell(&r.fingerprint),
            cell(&r.depth),
            cell(&r.mean_groups_per_node),
            r.seed.to_string(),
            r.status.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Sweep(e.to_string()))?;
    fsx::write_atomic(path, bytes)
}

/// Records from a CSV written by [`emit_csv`]; `build_dir` is left empty.
pub fn parse_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let bytes = fsx::read(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
    let num = |s: &str, what: &str| -> Result<Option<f64>> {
        opt(s)
            .map(|v| v.parse().map_err(|_| Error::Sweep(format!("bad {what} {v:?}"))))
            .transpose()
    };
    let mut out = vec![];
    for row in r.records() {
        let row = row?;
        if row.len() != CSV_COLUMNS.len() {
            return Err(Error::Sweep(format!(
                "expected {} columns, got {}",
                CSV_COLUMNS.len(),
                row.len()
            )));
        }
        out.push(SweepRecord {
            value: row[0].to_string(),
            accuracy: num(&row[1], "accuracy")?,
            fingerprint: opt(&row[2]),
            depth: num(&row[3], "depth")?.map(|d| d as usize),
            mean_groups_per_node: num(&row[4], "mean_groups_per_node")?,
            seed: row[5]
                .parse()
                .map_err(|_| Error::Sweep(format!("bad seed {:?}", &row[5])))?,
            status: row[6].to_string(),
            build_dir: PathBuf::new(),
        });
    }
    Ok(out)
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Accuracy against swept value as SVG, one colour per tree fingerprint.
pub fn emit_plot(records: &[SweepRecord], path: &Path, parameter: &str) -> Result<()> {
    let ok: Vec<&SweepRecord> = records.iter().filter(|r| r.ok()).collect();
    if ok.is_empty() {
        return Err(Error::Sweep("nothing to plot: no successful records".into()));
    }
    let numeric: Option<Vec<f64>> = ok.iter().map(|r| r.value.parse().ok()).collect();
    let (xs, labels): (Vec<f64>, bool) = match numeric {
        Some(v) => (v, false),
        None => ((0..ok.len()).map(|i| i as f64).collect(), true),
    };
    let trees = distinct_trees(records);
    let (w, h, left, right, top, bottom) = (720.0, 420.0, 70.0, 200.0, 30.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if xmax > xmin { xmax - xmin } else { 1.0 };
    let sx = |x: f64| left + if xmax > xmin { (x - xmin) / span * pw } else { pw / 2.0 };
    let sy = |y: f64| top + (1.0 - y) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="Helvetica" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{y:.1}</text>"#,
            left - 6.0,
            sy(y) + 4.0
        );
    }
    let ticks: Vec<(f64, String)> = if labels {
        ok.iter().zip(&xs).map(|(r, &x)| (x, r.value.clone())).collect()
    } else {
        (0..=4)
            .map(|i| xmin + span * i as f64 / 4.0)
            .map(|x| (x, format!("{x:.3}")))
            .collect()
    };
    for (x, t) in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{t}</text>"#,
            sx(x),
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{parameter}</text>"#,
        left + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" transform="rotate(-90 18 {})" text-anchor="middle">accuracy</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (r, &x) in ok.iter().zip(&xs) {
        let f = r.fingerprint.as_deref().unwrap_or_default();
        let colour = PALETTE[trees.get_index_of(f).unwrap_or(0) % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="5" fill="{colour}"><title>{}={} accuracy {:.4}</title></circle>"#,
            sx(x),
            sy(r.accuracy.unwrap_or(0.0).clamp(0.0, 1.0)),
            parameter,
            r.value,
            r.accuracy.unwrap_or(0.0)
        );
    }
    for (i, (f, values)) in trees.iter().enumerate() {
        let y = top + 10.0 + 20.0 * i as f64;
        let x = w - right + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><circle cx="{x}" cy="{y}" r="5" fill="{}"/><text x="{}" y="{}">tree {} ({} pts)</text></g>"#,
            PALETTE[i % PALETTE.len()],
            x + 10.0,
            y + 4.0,
            &f[..f.len().min(8)],
            values.len()
        );
    }
    s.push_str("</svg>\n");
    fsx::write_atomic(path, s)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::config::load_config;
    use crate::sim::{grouping_profile, SimilarityMatrix};

    fn record(value: &str, f: Option<&str>) -> SweepRecord {
        SweepRecord {
            value: value.into(),
            accuracy: f.map(|_| 0.5),
            fingerprint: f.map(String::from),
            depth: f.map(|_| 2),
            mean_groups_per_node: f.map(|_| 2.5),
            seed: 42,
            status: if f.is_some() { "ok" } else { "failed" }.into(),
            build_dir: PathBuf::from("x"),
        }
    }

    fn svhn() -> ExperimentConfig {
        load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/svhn.yaml")).unwrap()
    }

    #[test]
    fn standard_gv_range_has_21_points() {
        let spec = SweepSpec::new(
            svhn(),
            "training.grouping_volatility",
            SweepValues::Range {
                start: 0.60,
                stop: 1.20,
                step: 0.03,
            },
        );
        spec.validate().unwrap();
        let pts = spec.points();
        assert_eq!(pts.len(), 21);
        assert_eq!(pts[0].0, "0.6");
        assert_eq!(pts[20].0, "1.2");
        assert_eq!(spec.config_for("0.63", 0).unwrap().training.grouping_volatility, 0.63);
    }

    #[test]
    fn repeats_and_regimes() {
        let mut spec = SweepSpec::new(svhn(), REGIME_KEY, SweepValues::List(vec!["TR1".into(), "6".into()]));
        spec.repeats = 2;
        spec.validate().unwrap();
        assert_eq!(spec.points().len(), 4);
        let c = spec.config_for("TR6", 1).unwrap();
        assert_eq!(c.splits.train.batch_size, 500);
        assert_eq!(c.seed, 42);
        spec.base_config.deterministic = false;
        assert_ne!(spec.config_for("TR6", 1).unwrap().seed, 42);
        assert!(
            SweepSpec::new(svhn(), REGIME_KEY, SweepValues::List(vec!["TR9".into()]))
                .validate()
                .is_err()
        );
        assert!(SweepSpec::new(svhn(), "nope", SweepValues::List(vec!["1".into()]))
            .validate()
            .is_err());
    }

    #[test]
    fn distinct_trees_groups_in_order() {
        assert!(distinct_trees(&[]).is_empty());
        let same = [record("1", Some("a")), record("2", Some("a"))];
        assert_eq!(distinct_trees(&same).len(), 1);
        let recs = [
            record("1", Some("b")),
            record("2", Some("a")),
            record("3", None),
            record("4", Some("b")),
        ];
        let d = distinct_trees(&recs);
        assert_eq!(d.keys().collect::<Vec<_>>(), ["b", "a"]);
        assert_eq!(d["b"], ["1", "4"]);
    }

    #[test]
    fn csv_round_trip_and_line_count() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<SweepRecord> = (0..21)
            .map(|i| record(&format!("0.{i}"), if i % 5 == 0 { None } else { Some("f") }))
            .collect();
        let p = dir.path().join("s.csv");
        emit_csv(&recs, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 22);
        let back = parse_csv(&p).unwrap();
        let strip = |v: &[SweepRecord]| {
            v.iter()
                .map(|r| SweepRecord {
                    build_dir: PathBuf::new(),
                    ..r.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(back, strip(&recs));
        emit_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), CSV_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn plot_has_one_legend_entry_per_tree() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.svg");
        let recs = [
            record("0.6", Some("a")),
            record("0.7", Some("b")),
            record("0.8", Some("c")),
            record("0.9", Some("a")),
        ];
        emit_plot(&recs, &p, "gv").unwrap();
        let svg = std::fs::read_to_string(&p).unwrap();
        assert_eq!(svg.matches(r#"class="legend-entry""#).count(), 3);
        assert_eq!(svg.matches("<circle").count(), 4 + 3);
        assert!(emit_plot(&[], &p, "gv").is_err());
        emit_plot(&[record("TR1", Some("a"))], &p, "regime").unwrap();
    }

    proptest! {
        #[test]
        fn frozen_matrix_group_count_is_monotone(seed in any::<u64>(), k in 2usize..8) {
            use rand::Rng;
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let v: Vec<f64> = (0..k).map(|_| r.gen::<f64>()).collect();
                    let s: f64 = v.iter().sum();
                    v.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let m = SimilarityMatrix::indexed(rows).unwrap();
            let profile = grouping_profile(&m, &gv_range(0.60, 1.20, 0.03)).unwrap();
            prop_assert_eq!(profile.len(), 21);
            for w in profile.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
        }
    }
}
