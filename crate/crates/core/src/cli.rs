//! The `trunk` command line.
//!
//! Exit codes: 0 success, 1 invalid invocation or config, 2 runtime failure.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::config::{apply_overrides, load_config, shipped_config, DatasetName, ExperimentConfig};
use crate::data::{data_root, LoadOptions};
use crate::envkit::{self, ImportMap, Manifest};
use crate::error::{fsx, Error};
use crate::evaluator::{evaluate_build, CSV_HEADER, EVAL_FILE};
use crate::report::report_scaffold_all;
use crate::sweep::{distinct_trees, run_sweep, SweepOptions, SweepSpec, SweepValues, CSV_FILE};
use crate::trainer::{build_and_train, BuildOptions, OPTIONS_FILE, TREE_FILE};
use crate::tree::{compare, fingerprint, load_tree};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Images kept per category under `--debug`.
pub const DEBUG_CAP: usize = 40;

#[derive(Debug, Parser)]
#[command(
    name = "trunk",
    version,
    about = "Build, evaluate and package trees of shallow classifiers"
)]
pub struct Cli {
    /// Grow and train a tree.
    #[arg(long)]
    pub train: bool,
    /// Evaluate a trained tree on the test split.
    #[arg(long)]
    pub infer: bool,
    /// Train one tree per value of a config key.
    #[arg(long)]
    pub sweep: bool,
    /// Write requirements.txt and environment.yml from a source scan.
    #[arg(long)]
    pub envgen: bool,
    /// Compare a manifest against a source scan.
    #[arg(long)]
    pub envcheck: bool,
    /// Compare two trees.
    #[arg(long)]
    pub treecmp: bool,
    /// Write a README for finished builds.
    #[arg(long)]
    pub report: bool,

    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long = "model_backbone")]
    pub model_backbone: Option<String>,
    /// Config file; defaults to the shipped config for --dataset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Verbose logs and capped, surrogate-tolerant data loading.
    #[arg(long)]
    pub debug: bool,
    /// Use the config value when given alone; override it when given a value.
    #[arg(long = "grouping_volatility", num_args = 0..=1, value_name = "GV")]
    pub grouping_volatility: Option<Option<f64>>,
    /// Build directory (repeatable for --report).
    #[arg(long = "build_dir")]
    pub build_dir: Vec<PathBuf>,
    /// Dataset root; defaults to $TRUNK_DATA_ROOT or ./data.
    #[arg(long = "data_root")]
    pub data_root: Option<PathBuf>,

    /// Swept key (--sweep).
    #[arg(long, default_value = "training.grouping_volatility")]
    pub param: String,
    /// Comma-separated values (--sweep).
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<String>,
    /// `start:stop:step`, inclusive (--sweep).
    #[arg(long)]
    pub range: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,

    /// Python source root (--envgen, --envcheck).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Manifest to check (--envcheck).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory (--envgen) or file (--report).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long = "find_links")]
    pub find_links: Option<String>,
    #[arg(long = "env_name", default_value = "trunk")]
    pub env_name: String,
    #[arg(long, value_delimiter = ',', default_value = "defaults")]
    pub channels: Vec<String>,
    /// Distributions installed through pip inside the conda file.
    #[arg(long = "pip_section", value_delimiter = ',')]
    pub pip_section: Vec<String>,
    /// YAML `import: distribution` additions.
    #[arg(long = "import_map")]
    pub import_map: Option<PathBuf>,
    /// Print reports as JSON.
    #[arg(long)]
    pub json: bool,

    /// Two trees or build directories (--treecmp).
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub trees: Vec<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::MalformedConfig { .. }
            | Error::InvalidConfig(_)
            | Error::UnknownOverrideKey { .. }
            | Error::OverrideValue { .. }
            | Error::UnknownDataset(_) => Failure::Invalid(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

const MODES: [&str; 7] = [
    "--train",
    "--infer",
    "--sweep",
    "--envgen",
    "--envcheck",
    "--treecmp",
    "--report",
];

impl Cli {
    fn modes(&self) -> Vec<&'static str> {
        let on = [
            self.train,
            self.infer,
            self.sweep,
            self.envgen,
            self.envcheck,
            self.treecmp,
            self.report,
        ];
        MODES.iter().zip(on).filter(|(_, o)| *o).map(|(m, _)| *m).collect()
    }

    fn load_options(&self) -> LoadOptions {
        LoadOptions {
            max_per_category: self.debug.then_some(DEBUG_CAP),
            surrogate_if_missing: self.debug,
        }
    }

    fn data_root(&self) -> PathBuf {
        self.data_root.clone().unwrap_or_else(data_root)
    }

    /// Config from --config or the shipped one for --dataset, with flag and
    /// --set overrides applied.
    fn experiment_config(&self) -> std::result::Result<ExperimentConfig, Failure> {
        let base = match (&self.config, &self.dataset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(name)) => {
                let name: DatasetName = name.parse().map_err(|_| Error::UnknownDataset(name.clone()))?;
                shipped_config(name)
            }
            (None, None) => return Err(Failure::Invalid("--dataset or --config is required".into())),
        };
        let mut overrides = vec![];
        if let Some(d) = &self.dataset {
            overrides.push(format!("dataset={d}"));
        }
        if let Some(b) = &self.model_backbone {
            overrides.push(format!("model_backbone={b}"));
        }
        if let Some(Some(gv)) = self.grouping_volatility {
            overrides.push(format!("training.grouping_volatility={gv}"));
        }
        overrides.extend(self.overrides.iter().cloned());
        let config = apply_overrides(&base, &overrides)?;
        config.dataset_name()?;
        config.backbone()?;
        Ok(config)
    }

    fn single_build_dir(&self) -> std::result::Result<Option<PathBuf>, Failure> {
        match self.build_dir.as_slice() {
            [] => Ok(None),
            [one] => Ok(Some(one.clone())),
            _ => Err(Failure::Invalid("--build_dir may be given once for this mode".into())),
        }
    }

    fn default_build_dir(&self, config: &ExperimentConfig, prefix: &str) -> std::result::Result<PathBuf, Failure> {
        Ok(self.single_build_dir()?.unwrap_or_else(|| {
            let name = format!(
                "{prefix}{}-{}",
                config.dataset_name().map(|d| d.as_str()).unwrap_or("data"),
                config.backbone().map(|b| b.as_str()).unwrap_or("net")
            );
            config.output_dir.join(name)
        }))
    }
}

fn train(cli: &Cli, out: &mut dyn Write) -> Outcome {
    let config = cli.experiment_config()?;
    let dir = cli.default_build_dir(&config, "")?;
    let opts = BuildOptions {
        load: cli.load_options(),
        data_root: cli.data_root(),
        ..Default::default()
    };
    let report = build_and_train(&config, &dir, &opts)?;
    writeln!(
        out,
        "build_done dir={} nodes={} depth={} fingerprint={} secs={:.2}",
        dir.display(),
        report.node_reports.len(),
        report.tree.depth(),
        fingerprint(&report.tree)?,
        report.total_wall_time
    )?;
    Ok(())
}

fn infer(cli: &Cli, out: &mut dyn Write) -> Outcome {
    let dir = match cli.single_build_dir()? {
        Some(d) => d,
        None => cli.default_build_dir(&cli.experiment_config()?, "")?,
    };
    if !dir.join(TREE_FILE).exists() {
        return Err(Failure::Runtime(format!(
            "no tree found in {} (run --train first or pass --build_dir)",
            dir.display()
        )));
    }
    let config = load_config(dir.join(crate::trainer::CONFIG_FILE))?;
    let mut load = match fsx::read_to_string(&dir.join(OPTIONS_FILE)) {
        Ok(text) => serde_json::from_str::<BuildOptions>(&text).map_err(Error::from)?.load,
        Err(_) => LoadOptions::default(),
    };
    if cli.debug {
        load = cli.load_options();
    }
    let result = evaluate_build(&config, &dir, &cli.data_root(), &load)?;
    result.save(&dir.join(EVAL_FILE))?;
    writeln!(out, "{CSV_HEADER}\n{}", result.csv_row())?;
    Ok(())
}

fn parse_range(text: &str) -> std::result::Result<SweepValues, Failure> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Invalid(format!("--range expects start:stop:step, got `{text}`")))?;
    match parts.as_slice() {
        [start, stop, step] => Ok(SweepValues::Range {
            start: *start,
            stop: *stop,
            step: *step,
        }),
        _ => Err(Failure::Invalid(format!(
            "--range expects start:stop:step, got `{text}`"
        ))),
    }
}

fn sweep(cli: &Cli, out: &mut dyn Write) -> Outcome {
    let config = cli.experiment_config()?;
    let values = match (&cli.range, cli.values.is_empty()) {
        (Some(r), true) => parse_range(r)?,
        (None, false) => SweepValues::List(cli.values.clone()),
        _ => {
            return Err(Failure::Invalid(
                "--sweep needs exactly one of --values or --range".into(),
            ))
        }
    };
    let mut spec = SweepSpec::new(config.clone(), cli.param.clone(), values);
    spec.repeats = cli.repeats;
    spec.validate().map_err(|e| Failure::Invalid(e.to_string()))?;
    let dir = cli.default_build_dir(&config, "sweep-")?;
    let opts = SweepOptions {
        build: BuildOptions {
            load: cli.load_options(),
            data_root: cli.data_root(),
            ..Default::default()
        },
        ..Default::default()
    };
    let records = run_sweep(&spec, &dir, &opts)?;
    let failed = records.iter().filter(|r| !r.ok()).count();
    writeln!(
        out,
        "sweep_done dir={} points={} failed={} distinct_trees={} csv={}",
        dir.display(),
        records.len(),
        failed,
        distinct_trees(&records).len(),
        dir.join(CSV_FILE).display()
    )?;
    Ok(())
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str, mode: &str) -> std::result::Result<&'a Path, Failure> {
    v.as_deref()
        .ok_or_else(|| Failure::Invalid(format!("{mode} requires {flag}")))
}

fn import_map(cli: &Cli) -> std::result::Result<ImportMap, Failure> {
    Ok(match &cli.import_map {
        Some(p) => ImportMap::shipped().extend_from_yaml(p)?,
        None => ImportMap::shipped(),
    })
}

fn envgen(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let source = required(&cli.source, "--source", "--envgen")?;
    let scan = envkit::scan(source, &import_map(cli)?)?;
    let mut deps = scan.deps.clone();
    deps.find_links = cli.find_links.clone();
    let dest = cli.output.clone().unwrap_or_else(|| PathBuf::from("."));
    fsx::create_dir_all(&dest)?;
    let pip_section: BTreeSet<String> = cli.pip_section.iter().cloned().collect();
    let req = dest.join("requirements.txt");
    let env = dest.join("environment.yml");
    fsx::write(&req, envkit::emit_pip_manifest(&deps))?;
    fsx::write(
        &env,
        envkit::emit_conda_manifest(&deps, &cli.env_name, &cli.channels, &pip_section),
    )?;
    for n in &scan.notes {
        writeln!(err, "note: {n}")?;
    }
    for w in &scan.warnings {
        writeln!(err, "warning: {w}")?;
    }
    for u in &scan.unresolvable {
        writeln!(err, "warning: {u}: dynamic import not resolved")?;
    }
    writeln!(
        out,
        "envgen_done files={} packages={} pip={} conda={}",
        scan.files_scanned,
        deps.names.len(),
        req.display(),
        env.display()
    )?;
    Ok(())
}

fn envcheck(cli: &Cli, out: &mut dyn Write) -> Outcome {
    let manifest = Manifest::load(required(&cli.manifest, "--manifest", "--envcheck")?)?;
    let scan = envkit::scan(required(&cli.source, "--source", "--envcheck")?, &import_map(cli)?)?;
    let report = envkit::compare(&manifest, &scan);
    if cli.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    } else {
        write!(out, "{}", report.to_text())?;
    }
    Ok(())
}

fn tree_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(TREE_FILE)
    } else {
        p.to_path_buf()
    }
}

fn treecmp(cli: &Cli, out: &mut dyn Write) -> Outcome {
    let [a, b] = cli.trees.as_slice() else {
        return Err(Failure::Invalid("--treecmp requires --trees A B".into()));
    };
    let (ta, tb) = (load_tree(&tree_path(a))?, load_tree(&tree_path(b))?);
    let c = compare(&ta, &tb)?;
    writeln!(
        out,
        "identical={} similarity={:.4} fingerprint_a={} fingerprint_b={}",
        c.identical,
        c.similarity,
        fingerprint(&ta)?,
        fingerprint(&tb)?
    )?;
    Ok(())
}

fn report(cli: &Cli, out: &mut dyn Write) -> Outcome {
    if cli.build_dir.is_empty() {
        return Err(Failure::Invalid("--report requires at least one --build_dir".into()));
    }
    let dest = cli.output.clone().unwrap_or_else(|| PathBuf::from("README.md"));
    report_scaffold_all(&cli.build_dir, &dest)?;
    writeln!(out, "report_done output={}", dest.display())?;
    Ok(())
}

fn init_logging(debug: bool) {
    let level = if debug {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp_millis()
        .try_init();
}

/// Run with explicit output streams; returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{text}");
                EXIT_OK
            } else {
                let _ = write!(err, "{text}");
                EXIT_INVALID
            };
        }
    };
    let modes = cli.modes();
    if modes.len() != 1 {
        let given = if modes.is_empty() {
            "none".to_string()
        } else {
            modes.join(" ")
        };
        let _ = writeln!(
            err,
            "error: exactly one mode is required ({}); got {given}",
            MODES.join(", ")
        );
        return EXIT_INVALID;
    }
    init_logging(cli.debug);
    let outcome = match modes[0] {
        "--train" => train(&cli, out),
        "--infer" => infer(&cli, out),
        "--sweep" => sweep(&cli, out),
        "--envgen" => envgen(&cli, out, err),
        "--envcheck" => envcheck(&cli, out),
        "--treecmp" => treecmp(&cli, out),
        _ => report(&cli, out),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_INVALID
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

/// Run against the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
