//! Per-node training and adaptive tree construction.
//!
//! A node is trained on its categories, its validation confusions are
//! grouped under the configured grouping volatility, its head is retrained to
//! route by group, and every multi-category group becomes a child node. All
//! state lives in a build directory so an interrupted build can resume
//! without retraining finished nodes:
//!
//! ```text
//! <build_dir>/
//!   config.yaml  options.json  manifest.json  progress.log
//!   tree.partial.json (while building)  tree.json  build.json
//!   nodes/<id>/{weights.bin, weights.json, report.json, similarity.csv}
//! ```

pub mod optim;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{flatten, ExperimentConfig, Split, TrainSpec};
use crate::data::{build_pipeline, restrict_and_relabel, AugmentationPipeline, DataBundle, Dataset, LoadOptions};
use crate::error::{fsx, Error, Result};
use crate::model::{
    init_seed, load_checkpoint, make_node_network, nll_loss, save_checkpoint, BackboneSpec, NodeNetwork,
};
use crate::provenance::{self, RunManifest, MANIFEST_FILE};
use crate::seed::{seed_all, SeedSource};
use crate::sim::{compute_similarity, group_categories};
use crate::tensor::ImageShape;
use crate::tree::{save_tree, validate, Trunk};

use optim::{scheduled_lr, Optimizer};

pub const CONFIG_FILE: &str = "config.yaml";
pub const OPTIONS_FILE: &str = "options.json";
pub const TREE_FILE: &str = "tree.json";
/// The tree as grown so far; not yet a valid tree.
pub const PARTIAL_TREE_FILE: &str = "tree.partial.json";
pub const BUILD_FILE: &str = "build.json";
pub const LOG_FILE: &str = "progress.log";
pub const NODES_DIR: &str = "nodes";
pub const REPORT_FILE: &str = "report.json";
pub const SIMILARITY_FILE: &str = "similarity.csv";

/// One training pass over a node (discovery, routing or fixed-tree).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: String,
    pub out_groups: usize,
    pub epochs_run: u32,
    pub final_train_loss: f64,
    pub val_accuracy: f64,
    pub wall_time: f64,
}

/// Everything recorded about a finished node. The headline numbers are
/// those of the last phase, whose parameters are checkpointed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrainReport {
    pub node_id: String,
    pub categories: BTreeSet<usize>,
    pub grouping: Vec<BTreeSet<usize>>,
    pub epochs_run: u32,
    pub final_train_loss: f64,
    pub val_accuracy: f64,
    pub wall_time: f64,
    /// Relative to the build directory.
    pub checkpoint: PathBuf,
    pub flops: u64,
    pub phases: Vec<PhaseReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub tree: Trunk,
    pub node_reports: Vec<NodeTrainReport>,
    pub config_digest: String,
    pub seed: u64,
    pub total_wall_time: f64,
    pub manifest: PathBuf,
    /// True when a published dataset was replaced by synthetic data.
    pub surrogate_data: bool,
    /// Size caps and substitutions applied when loading the data.
    #[serde(default)]
    pub data_caps: LoadOptions,
}

/// Settings that shape a build but are not part of the experiment config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub load: LoadOptions,
    /// Backbone to use instead of the shipped spec for the config's family.
    pub backbone: Option<BackboneSpec>,
    /// Train against this structure instead of discovering one.
    pub fixed_tree: Option<Trunk>,
    #[serde(skip)]
    pub data_root: PathBuf,
    /// Stop with [`Error::Interrupted`] after this many nodes are trained in
    /// this invocation, as if the process had been killed.
    #[serde(skip)]
    pub stop_after_nodes: Option<usize>,
}

/// Training settings shared by every node of a build.
pub struct TrainContext {
    pub spec: TrainSpec,
    pub batch_size: usize,
    pub shuffle: bool,
    pub eval_batch_size: usize,
    pub train_pipeline: AugmentationPipeline,
    pub val_pipeline: AugmentationPipeline,
    pub seeds: SeedSource,
}

impl TrainContext {
    pub fn new(config: &ExperimentConfig, shape: ImageShape) -> Result<Self> {
        let train = config.splits.get(Split::Train);
        let val = config.splits.get(Split::Validation);
        Ok(Self {
            spec: config.training.clone(),
            batch_size: train.batch_size,
            shuffle: train.shuffle,
            eval_batch_size: val.batch_size.max(64),
            train_pipeline: build_pipeline(&train.transforms, shape)?,
            val_pipeline: build_pipeline(&val.transforms, shape)?,
            seeds: SeedSource::new(config.seed),
        })
    }
}

/// Fraction of `data` whose label is the network's argmax (lowest index on ties).
pub fn accuracy(net: &NodeNetwork, data: &Dataset, pipeline: &AugmentationPipeline, batch_size: usize) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let rng = SeedSource::new(0).rng("accuracy");
    let mut correct = 0usize;
    for b in data.batches(batch_size, false, pipeline, rng) {
        for (p, &y) in net.probabilities(&b.images).iter().zip(&b.labels) {
            correct += usize::from(argmax(p) == y);
        }
    }
    correct as f64 / data.len() as f64
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Train `network` on `train` (labels are group indices), keeping the
/// parameters with the best validation accuracy.
pub fn train_node(
    network: &mut NodeNetwork,
    train: &Dataset,
    val: &Dataset,
    ctx: &TrainContext,
    node: &str,
    phase: &str,
) -> Result<PhaseReport> {
    let start = Instant::now();
    let groups = network.out_groups;
    if train.num_labels != groups {
        return Err(Error::Train(format!(
            "node {node}: network has {groups} outputs but data has {} groups",
            train.num_labels
        )));
    }
    if let Some(g) = train.count_per_label().iter().position(|&n| n == 0) {
        return Err(Error::Train(format!("node {node}: group {g} has no training images")));
    }
    let report = |epochs_run, final_train_loss, val_accuracy| PhaseReport {
        phase: phase.into(),
        out_groups: groups,
        epochs_run,
        final_train_loss,
        val_accuracy,
        wall_time: start.elapsed().as_secs_f64(),
    };
    if groups == 1 {
        return Ok(report(0, 0.0, 1.0));
    }
    let val = if val.is_empty() {
        warn!("node {node}: empty validation split, selecting on training data");
        train
    } else {
        val
    };
    let spec = &ctx.spec;
    let mut opt = Optimizer::new(&spec.optimizer);
    let mut best = (
        accuracy(network, val, &ctx.val_pipeline, ctx.eval_batch_size),
        network.clone(),
    );
    let mut last_loss = f64::NAN;
    for epoch in 0..spec.epochs {
        let lr = scheduled_lr(spec.optimizer.lr, &spec.lr_scheduler, epoch);
        let rng = ctx.seeds.rng(&format!("train/{node}/{phase}/epoch{epoch}"));
        let (mut sum, mut n) = (0.0, 0usize);
        for batch in train.batches(ctx.batch_size, ctx.shuffle, &ctx.train_pipeline, rng) {
            let net = &mut network.net;
            net.zero_grad();
            let (logits, trace) = net.forward_train(&batch.images);
            let (loss, grad) = nll_loss(&logits, &batch.labels);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    node: node.into(),
                    epoch,
                    lr,
                });
            }
            net.backward(&trace, grad);
            opt.step(net.params_mut(), lr);
            sum += loss * batch.labels.len() as f64;
            n += batch.labels.len();
        }
        last_loss = sum / n as f64;
        let acc = accuracy(network, val, &ctx.val_pipeline, ctx.eval_batch_size);
        info!("node {node} {phase} epoch {epoch}: loss {last_loss:.5} val {acc:.4} lr {lr:.6}");
        if acc > best.0 {
            best = (acc, network.clone());
        }
    }
    *network = best.1;
    Ok(report(spec.epochs, last_loss, best.0))
}

fn singletons(cats: &BTreeSet<usize>) -> Vec<BTreeSet<usize>> {
    cats.iter().map(|&c| BTreeSet::from([c])).collect()
}

fn group_map(grouping: &[BTreeSet<usize>]) -> BTreeMap<usize, usize> {
    grouping
        .iter()
        .enumerate()
        .flat_map(|(g, set)| set.iter().map(move |&c| (c, g)))
        .collect()
}

struct Build<'a> {
    dir: &'a Path,
    config: &'a ExperimentConfig,
    opts: &'a BuildOptions,
    bundle: DataBundle,
    spec: BackboneSpec,
    ctx: TrainContext,
}

impl Build<'_> {
    fn log(&self, line: String) -> Result<()> {
        let path = self.dir.join(LOG_FILE);
        let ts = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{ts} {line}").map_err(|e| Error::io(&path, e))
    }

    fn node_dir(&self, id: &str) -> PathBuf {
        self.dir.join(NODES_DIR).join(id)
    }

    fn completed(&self, id: &str) -> Option<NodeTrainReport> {
        let dir = self.node_dir(id);
        if !dir.join("weights.json").exists() {
            return None;
        }
        let text = std::fs::read_to_string(dir.join(REPORT_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Train one node and attach its children. Returns the report and
    /// whether training actually ran.
    fn node(&self, tree: &mut Trunk, id: &str) -> Result<(NodeTrainReport, bool)> {
        let node = tree.node(id)?.clone();
        if node.depth > tree.num_categories() {
            return Err(Error::Train(format!(
                "node {id}: depth {} exceeds the category count",
                node.depth
            )));
        }
        let rel = PathBuf::from(NODES_DIR).join(id);
        if let Some(r) = self.completed(id) {
            self.log(format!("event=node_skip node={id}"))?;
            tree.split(id, r.grouping.clone())?;
            tree.nodes.get_mut(id).expect("exists").weights_ref = Some(rel);
            return Ok((r, false));
        }
        let start = Instant::now();
        let cats = &node.categories;
        self.log(format!("event=node_start node={id} categories={}", cats.len()))?;
        let dir = self.node_dir(id);
        fsx::create_dir_all(&dir)?;

        let fixed = match &self.opts.fixed_tree {
            Some(t) => Some(t.node(id)?.grouping.clone()),
            None => None,
        };
        let mut phases = vec![];
        let (net, grouping) = match fixed {
            Some(grouping) => {
                let map = group_map(&grouping);
                let train = restrict_and_relabel(&self.bundle.train, cats, &map)?;
                let val = restrict_and_relabel(&self.bundle.validation, cats, &map)?;
                let mut net = make_node_network(&self.spec, grouping.len(), init_seed(self.config.seed, id))?;
                phases.push(train_node(&mut net, &train, &val, &self.ctx, id, "fixed")?);
                (net, grouping)
            }
            None => {
                let local = singletons(cats);
                let map = group_map(&local);
                let train = restrict_and_relabel(&self.bundle.train, cats, &map)?;
                let val = restrict_and_relabel(&self.bundle.validation, cats, &map)?;
                let mut net = make_node_network(&self.spec, cats.len(), init_seed(self.config.seed, id))?;
                phases.push(train_node(&mut net, &train, &val, &self.ctx, id, "discover")?);
                let names: Vec<String> = cats.iter().map(|&c| tree.category_label(c)).collect();
                let sim_data = if val.is_empty() { &train } else { &val };
                let s = compute_similarity(&net, sim_data, &self.ctx.val_pipeline, &names)?;
                s.save_csv(&dir.join(SIMILARITY_FILE))?;
                let members: Vec<usize> = cats.iter().copied().collect();
                let groups: Vec<BTreeSet<usize>> = group_categories(&s, self.config.training.grouping_volatility)?
                    .partition
                    .iter()
                    .map(|g| g.iter().map(|&i| members[i]).collect())
                    .collect();
                if groups.len() == 1 || groups.len() == cats.len() {
                    (net, local)
                } else {
                    let map = group_map(&groups);
                    let train = restrict_and_relabel(&self.bundle.train, cats, &map)?;
                    let val = restrict_and_relabel(&self.bundle.validation, cats, &map)?;
                    net.replace_head(groups.len(), self.ctx.seeds.derive(&format!("head/{id}")))?;
                    phases.push(train_node(&mut net, &train, &val, &self.ctx, id, "route")?);
                    (net, groups)
                }
            }
        };
        save_checkpoint(&net, &dir)?;
        let last = phases.last().expect("at least one phase").clone();
        let report = NodeTrainReport {
            node_id: id.into(),
            categories: cats.clone(),
            grouping: grouping.clone(),
            epochs_run: last.epochs_run,
            final_train_loss: last.final_train_loss,
            val_accuracy: last.val_accuracy,
            wall_time: start.elapsed().as_secs_f64(),
            checkpoint: rel.clone(),
            flops: net.flops(),
            phases,
        };
        fsx::write_atomic(
            &dir.join(REPORT_FILE),
            serde_json::to_string_pretty(&report)?.as_bytes(),
        )?;
        tree.split(id, grouping)?;
        tree.nodes.get_mut(id).expect("exists").weights_ref = Some(rel);
        self.log(format!(
            "event=node_done node={id} groups={} epochs={} loss={:.6} val_acc={:.4} secs={:.2}",
            report.grouping.len(),
            report.epochs_run,
            report.final_train_loss,
            report.val_accuracy,
            report.wall_time
        ))?;
        Ok((report, true))
    }
}

fn stored_digest_check(dir: &Path, config: &ExperimentConfig) -> Result<bool> {
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Ok(false);
    }
    let stored = ExperimentConfig::from_yaml_str(&fsx::read_to_string(&path)?, &path.display().to_string())?;
    if stored.digest() != config.digest() {
        let (a, b) = (flatten(&stored), flatten(config));
        let diff = a
            .keys()
            .chain(b.keys())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|k| a.get(*k) != b.get(*k))
            .cloned()
            .collect();
        return Err(Error::DigestMismatch {
            stored: stored.digest(),
            current: config.digest(),
            diff,
        });
    }
    Ok(true)
}

/// Build the tree for `config` in `build_dir`, training every node.
///
/// If `build_dir` already holds a build of the same config, finished nodes
/// are reused; a different config is refused with [`Error::DigestMismatch`].
pub fn build_and_train(config: &ExperimentConfig, build_dir: &Path, opts: &BuildOptions) -> Result<BuildReport> {
    config.validate()?;
    seed_all(config.seed);
    let t0 = Instant::now();
    fsx::create_dir_all(&build_dir.join(NODES_DIR))?;
    let existing = stored_digest_check(build_dir, config)?;
    let options_path = build_dir.join(OPTIONS_FILE);
    if existing {
        if options_path.exists() {
            let stored: serde_json::Value = serde_json::from_str(&fsx::read_to_string(&options_path)?)?;
            if stored != serde_json::to_value(opts)? {
                return Err(Error::Train(format!(
                    "{} was built with different build options",
                    build_dir.display()
                )));
            }
        }
        let done = build_dir.join(BUILD_FILE);
        if done.exists() {
            return Ok(serde_json::from_str(&fsx::read_to_string(&done)?)?);
        }
    } else {
        fsx::write_atomic(&build_dir.join(CONFIG_FILE), config.to_yaml_string().as_bytes())?;
    }
    fsx::write_atomic(&options_path, serde_json::to_string_pretty(opts)?.as_bytes())?;

    let bundle = DataBundle::load(config, &opts.data_root, &opts.load)?;
    let shape = bundle.handle.image_shape;
    let manifest = if build_dir.join(MANIFEST_FILE).exists() {
        let mut m = RunManifest::load(build_dir)?;
        let now = provenance::capture(config).with_data(&bundle.checksums, &bundle.carve);
        let changed = provenance::diff(&m, &now);
        m.add_note(if changed.is_empty() {
            "resumed".to_string()
        } else {
            format!("resumed; differing fields: {}", changed.join(", "))
        });
        m
    } else {
        provenance::capture(config).with_data(&bundle.checksums, &bundle.carve)
    };
    manifest.save(build_dir)?;

    let spec = match &opts.backbone {
        Some(s) => s.clone(),
        None => BackboneSpec::shipped(config.backbone()?, shape).with_norm(config.training.norm),
    };
    if spec.input_shape != shape {
        return Err(Error::Model(format!(
            "backbone expects {} images, data is {shape}",
            spec.input_shape
        )));
    }
    if let Some(t) = &opts.fixed_tree {
        if t.num_categories() != bundle.handle.num_categories {
            return Err(Error::Tree(format!(
                "fixed tree has {} categories, dataset has {}",
                t.num_categories(),
                bundle.handle.num_categories
            )));
        }
    }
    let ctx = TrainContext::new(config, shape)?;
    let mut tree = Trunk::new(
        bundle.handle.name.clone(),
        bundle.handle.category_names.clone(),
        config.training.grouping_volatility,
        config.digest(),
    );
    let surrogate = bundle.surrogate;
    let b = Build {
        dir: build_dir,
        config,
        opts,
        bundle,
        spec,
        ctx,
    };
    b.log(format!(
        "event=build_start digest={} seed={}",
        config.digest(),
        config.seed
    ))?;

    let mut reports = vec![];
    let mut trained = 0usize;
    let mut stack = vec![tree.root_id.clone()];
    if tree.num_categories() == 1 {
        stack.clear();
    }
    while let Some(id) = stack.pop() {
        let (report, ran) = match b.node(&mut tree, &id) {
            Ok(r) => r,
            Err(e) => {
                let _ = save_partial(&tree, build_dir);
                let _ = b.log(format!("event=node_failed node={id}"));
                return Err(Error::BuildFailed {
                    node: id,
                    source: Box::new(e),
                    partial: Box::new(tree),
                });
            }
        };
        let node = tree.node(&id)?;
        for child in node.children.iter().rev() {
            if tree.node(child)?.categories.len() > 1 {
                stack.push(child.clone());
            }
        }
        reports.push(report);
        save_partial(&tree, build_dir)?;
        trained += usize::from(ran);
        if ran && opts.stop_after_nodes == Some(trained) && !stack.is_empty() {
            b.log(format!("event=interrupted completed={trained}"))?;
            return Err(Error::Interrupted { completed: trained });
        }
    }

    let violations = validate(&tree);
    if !violations.is_empty() {
        return Err(Error::InvalidTree(violations));
    }
    save_tree(&tree, &build_dir.join(TREE_FILE))?;
    let _ = std::fs::remove_file(build_dir.join(PARTIAL_TREE_FILE));
    let report = BuildReport {
        tree,
        node_reports: reports,
        config_digest: config.digest(),
        seed: config.seed,
        total_wall_time: t0.elapsed().as_secs_f64(),
        manifest: PathBuf::from(MANIFEST_FILE),
        surrogate_data: surrogate,
        data_caps: opts.load.clone(),
    };
    fsx::write_atomic(
        &build_dir.join(BUILD_FILE),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    b.log(format!(
        "event=build_done nodes={} secs={:.2}",
        report.node_reports.len(),
        report.total_wall_time
    ))?;
    Ok(report)
}

fn save_partial(tree: &Trunk, dir: &Path) -> Result<()> {
    fsx::write_atomic(
        &dir.join(PARTIAL_TREE_FILE),
        serde_json::to_string_pretty(tree)?.as_bytes(),
    )
}

/// Train every internal node of `tree` against its given grouping.
pub fn train_fixed_tree(
    config: &ExperimentConfig,
    tree: &Trunk,
    build_dir: &Path,
    opts: &BuildOptions,
) -> Result<BuildReport> {
    let violations = validate(tree);
    if !violations.is_empty() {
        return Err(Error::InvalidTree(violations));
    }
    let opts = BuildOptions {
        fixed_tree: Some(tree.clone()),
        ..opts.clone()
    };
    build_and_train(config, build_dir, &opts)
}

/// Continue the build in `build_dir`. With `current`, the stored config must
/// match it; without, the stored config is used.
pub fn resume(build_dir: &Path, current: Option<&ExperimentConfig>, data_root: &Path) -> Result<BuildReport> {
    let path = build_dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(Error::Train(format!(
            "{} holds no build to resume",
            build_dir.display()
        )));
    }
    let stored = ExperimentConfig::from_yaml_str(&fsx::read_to_string(&path)?, &path.display().to_string())?;
    let config = current.unwrap_or(&stored);
    let mut opts: BuildOptions = match fsx::read_to_string(&build_dir.join(OPTIONS_FILE)) {
        Ok(t) => serde_json::from_str(&t)?,
        Err(_) => BuildOptions::default(),
    };
    opts.data_root = data_root.to_path_buf();
    build_and_train(config, build_dir, &opts)
}

/// Load every node network referenced by `tree` from `build_dir`.
pub fn load_networks(tree: &Trunk, build_dir: &Path) -> Result<BTreeMap<String, NodeNetwork>> {
    let mut out = BTreeMap::new();
    for node in tree.internal_nodes() {
        let rel = node
            .weights_ref
            .clone()
            .unwrap_or_else(|| PathBuf::from(NODES_DIR).join(&node.id));
        let net = load_checkpoint(&build_dir.join(rel)).map_err(|e| match e {
            Error::MissingCheckpoint(_) => Error::MissingCheckpoint(node.id.clone()),
            e => e,
        })?;
        if net.out_groups != node.children.len() {
            return Err(Error::Checkpoint(format!(
                "node {}: checkpoint has {} outputs, tree has {} children",
                node.id,
                net.out_groups,
                node.children.len()
            )));
        }
        out.insert(node.id.clone(), net);
    }
    Ok(out)
}
