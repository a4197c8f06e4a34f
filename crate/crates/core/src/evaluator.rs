//! Hierarchical inference and its metrics: accuracy, routing time and FLOPs.
//!
//! An image enters at the root; each internal node picks the child with the
//! highest probability (lowest index on ties) until a leaf is reached. Leaves
//! carry no weights.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Split};
use crate::data::{build_pipeline, AugmentationPipeline, DataBundle, Dataset, LoadOptions};
use crate::error::{fsx, Error, Result};
use crate::model::{count_flops, NodeNetwork};
use crate::seed::SeedSource;
use crate::tensor::{Image, Tensor};
use crate::trainer::{argmax, load_networks, TREE_FILE};
use crate::tree::{load_tree, NodeId, Trunk};

pub const EVAL_FILE: &str = "eval.json";

/// Anything that can score the children of an internal node.
pub trait NodeRouter {
    /// Child probabilities at `node` for each image of `batch`.
    fn probabilities(&self, node: &str, batch: &Tensor) -> Result<Vec<Vec<f64>>>;
    /// FLOPs of one forward pass at `node`.
    fn flops(&self, node: &str) -> Result<u64>;
}

impl NodeRouter for BTreeMap<String, NodeNetwork> {
    fn probabilities(&self, node: &str, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
        let net = self.get(node).ok_or_else(|| Error::MissingCheckpoint(node.into()))?;
        Ok(net.probabilities(batch))
    }

    fn flops(&self, node: &str) -> Result<u64> {
        let net = self.get(node).ok_or_else(|| Error::MissingCheckpoint(node.into()))?;
        count_flops(net, net.input_shape())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: String,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Seconds spent routing (forward passes and tree walks).
    pub total_time: f64,
    /// Seconds spent preparing images, reported separately.
    pub load_time: f64,
    pub mean_flops_per_image: f64,
    /// Sum over every internal node of one forward pass.
    pub all_internal_flops: u64,
    pub per_category_accuracy: BTreeMap<String, f64>,
    pub per_category_correct: BTreeMap<String, (usize, usize)>,
    /// Number of nodes on the path (leaf included) to image count.
    pub path_length_histogram: BTreeMap<usize, usize>,
}

pub const CSV_HEADER: &str = "dataset,accuracy,total_time,mean_flops_per_image,total";

impl EvalResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.1},{}",
            self.dataset, self.accuracy, self.total_time, self.mean_flops_per_image, self.total
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsx::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fsx::read_to_string(path)?)?)
    }
}

/// Route one prepared image; returns the category and the visited node ids.
pub fn infer_image(tree: &Trunk, router: &dyn NodeRouter, image: &Image) -> Result<(usize, Vec<NodeId>)> {
    let batch = Tensor::from_images(std::slice::from_ref(image));
    let mut id = tree.root_id.clone();
    let mut path = vec![id.clone()];
    loop {
        let node = tree.node(&id)?;
        if !node.is_internal() {
            let c = *node
                .categories
                .iter()
                .next()
                .ok_or_else(|| Error::Tree(format!("leaf {id} has no category")))?;
            return Ok((c, path));
        }
        let p = router.probabilities(&id, &batch)?;
        if p[0].len() != node.children.len() {
            return Err(Error::Eval(format!(
                "node {id} scores {} children, tree has {}",
                p[0].len(),
                node.children.len()
            )));
        }
        id = node.children[argmax(&p[0])].clone();
        path.push(id.clone());
    }
}

/// Evaluate over every image of `test`.
pub fn evaluate(
    tree: &Trunk,
    router: &dyn NodeRouter,
    test: &Dataset,
    pipeline: &AugmentationPipeline,
) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::Eval("empty test split".into()));
    }
    let mut flops: BTreeMap<&str, u64> = BTreeMap::new();
    for n in tree.internal_nodes() {
        flops.insert(&n.id, router.flops(&n.id)?);
    }
    let mut rng = SeedSource::new(0).rng("evaluate");
    let (mut route_time, mut load_time) = (0.0, 0.0);
    let mut correct = 0;
    let mut path_flops = 0u64;
    let mut per_cat: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..test.len() {
        let t = Instant::now();
        let img = pipeline.apply(test.image(i), &mut rng);
        load_time += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let (pred, path) = infer_image(tree, router, &img)?;
        route_time += t.elapsed().as_secs_f64();
        let truth = test.category(i);
        let entry = per_cat.entry(truth).or_default();
        entry.1 += 1;
        if pred == truth {
            correct += 1;
            entry.0 += 1;
        }
        path_flops += path.iter().filter_map(|id| flops.get(id.as_str())).sum::<u64>();
        *hist.entry(path.len()).or_default() += 1;
    }
    let total = test.len();
    Ok(EvalResult {
        dataset: tree.dataset.clone(),
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        total_time: route_time,
        load_time,
        mean_flops_per_image: path_flops as f64 / total as f64,
        all_internal_flops: flops.values().sum(),
        per_category_accuracy: per_cat
            .iter()
            .map(|(&c, &(k, n))| (tree.category_label(c), k as f64 / n as f64))
            .collect(),
        per_category_correct: per_cat.iter().map(|(&c, &v)| (tree.category_label(c), v)).collect(),
        path_length_histogram: hist,
    })
}

/// Evaluate the build in `build_dir` on the test split of `config`.
pub fn evaluate_build(
    config: &ExperimentConfig,
    build_dir: &Path,
    data_root: &Path,
    load: &LoadOptions,
) -> Result<EvalResult> {
    let tree = load_tree(&build_dir.join(TREE_FILE))?;
    let nets = load_networks(&tree, build_dir)?;
    let bundle = DataBundle::load(config, data_root, load)?;
    let pipeline = build_pipeline(&config.splits.get(Split::Test).transforms, bundle.handle.image_shape)?;
    evaluate(&tree, &nets, &bundle.test, &pipeline)
}

/// Published accuracy for a dataset, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claims {
    pub dataset: String,
    pub accuracy: f64,
}

impl Claims {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fsx::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unverifiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub dataset: String,
    /// Percent.
    pub measured: f64,
    pub claimed: Option<f64>,
    pub gap: Option<f64>,
    /// Percentage points.
    pub tolerance: f64,
    pub verdict: Verdict,
    pub claims_file: Option<PathBuf>,
}

/// Compare a measured accuracy (fraction) against optional claims.
pub fn judge(dataset: &str, measured: f64, claims: Option<&Claims>, tolerance: f64) -> VerifyReport {
    let measured = measured * 100.0;
    let (claimed, gap, verdict) = match claims {
        Some(c) => {
            let gap = (measured - c.accuracy).abs();
            // Rounding slack so a gap printed as the tolerance still passes.
            let v = if gap <= tolerance + 1e-9 {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            (Some(c.accuracy), Some(gap), v)
        }
        None => (None, None, Verdict::Unverifiable),
    };
    VerifyReport {
        dataset: dataset.into(),
        measured,
        claimed,
        gap,
        tolerance,
        verdict,
        claims_file: None,
    }
}

/// Measure the weights in `weights_dir` with `tree_file` and compare against
/// `claims_file` (`{dataset, accuracy}` in percent). A missing claims file
/// yields an unverifiable report rather than an error.
pub fn verify_pretrained(
    weights_dir: &Path,
    tree_file: &Path,
    config: &ExperimentConfig,
    claims_file: &Path,
    tolerance: f64,
    data_root: &Path,
    load: &LoadOptions,
) -> Result<VerifyReport> {
    let tree = load_tree(tree_file)?;
    let nets = load_networks(&tree, weights_dir)?;
    let bundle = DataBundle::load(config, data_root, load)?;
    let pipeline = build_pipeline(&config.splits.get(Split::Test).transforms, bundle.handle.image_shape)?;
    let result = evaluate(&tree, &nets, &bundle.test, &pipeline)?;
    let claims = if claims_file.exists() {
        Some(Claims::load(claims_file)?)
    } else {
        None
    };
    let mut report = judge(&tree.dataset, result.accuracy, claims.as_ref(), tolerance);
    report.claims_file = claims.map(|_| claims_file.to_path_buf());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::ImageShape;

    /// Routes by reading the category straight out of pixel 0.
    struct Oracle<'a> {
        tree: &'a Trunk,
    }

    impl NodeRouter for Oracle<'_> {
        fn probabilities(&self, node: &str, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
            let n = self.tree.node(node)?;
            Ok((0..batch.n)
                .map(|i| {
                    let c = batch.sample(i)[0].round() as usize;
                    n.grouping
                        .iter()
                        .map(|g| if g.contains(&c) { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect())
        }

        fn flops(&self, _node: &str) -> Result<u64> {
            Ok(10)
        }
    }

    struct Random(std::cell::RefCell<ChaCha8Rng>, usize);

    impl NodeRouter for Random {
        fn probabilities(&self, _node: &str, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
            let mut r = self.0.borrow_mut();
            Ok((0..batch.n)
                .map(|_| {
                    let mut v = vec![0.0; self.1];
                    v[r.gen_range(0..self.1)] = 1.0;
                    v
                })
                .collect())
        }

        fn flops(&self, _node: &str) -> Result<u64> {
            Ok(1)
        }
    }

    fn labelled(k: usize, per: usize) -> Dataset {
        let shape = ImageShape::new(1, 1, 1);
        let cats: Vec<usize> = (0..k * per).map(|i| i % k).collect();
        let images: Vec<u8> = cats.iter().map(|&c| c as u8).collect();
        Dataset::new("toy", shape, (0..k).map(|c| c.to_string()).collect(), images, cats).unwrap()
    }

    fn raw_pipeline() -> AugmentationPipeline {
        AugmentationPipeline::identity(ImageShape::new(1, 1, 1))
    }

    fn reference() -> Trunk {
        let text = include_str!("../reference/svhn_tree.json");
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn root_leaf_needs_no_forward_pass() {
        let tree = Trunk::new("one", vec!["only".into()], 0.7, "t");
        let map: BTreeMap<String, NodeNetwork> = BTreeMap::new();
        let img = Image::filled(ImageShape::new(1, 1, 1), 0.0);
        assert_eq!(infer_image(&tree, &map, &img).unwrap(), (0, vec!["0".to_string()]));
    }

    #[test]
    fn oracle_routes_category_seven_by_hand_walk() {
        let tree = reference();
        let mut img = Image::filled(ImageShape::new(1, 1, 1), 0.0);
        img.data[0] = 7.0;
        let (c, path) = infer_image(&tree, &Oracle { tree: &tree }, &img).unwrap();
        assert_eq!(c, 7);
        let want: Vec<String> = tree.path_to(7).unwrap();
        assert_eq!(path, want);
        assert_eq!(path.len(), 3);
    }

    #[test]
    fn oracle_is_perfect_and_flops_follow_paths() {
        let tree = reference();
        // Pixels arrive as u8/255, so scale the oracle's reading.
        struct Scaled<'a>(Oracle<'a>);
        impl NodeRouter for Scaled<'_> {
            fn probabilities(&self, node: &str, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
                let mut b = batch.clone();
                b.data.iter_mut().for_each(|v| *v *= 255.0);
                self.0.probabilities(node, &b)
            }
            fn flops(&self, node: &str) -> Result<u64> {
                self.0.flops(node)
            }
        }
        let data = labelled(10, 5);
        let r = evaluate(&tree, &Scaled(Oracle { tree: &tree }), &data, &raw_pipeline()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.path_length_histogram.values().sum::<usize>(), 50);
        let internal = tree.internal_nodes().count() as u64;
        assert_eq!(r.all_internal_flops, 10 * internal);
        assert!(r.mean_flops_per_image < r.all_internal_flops as f64);
        let summed: usize = r.per_category_correct.values().map(|v| v.0).sum();
        assert_eq!(summed, r.correct);
    }

    #[test]
    fn random_routing_is_chance() {
        let mut tree = Trunk::new("flat", (0..10).map(|c| c.to_string()).collect(), 1.0, "t");
        tree.split("0", (0..10).map(|c| BTreeSet::from([c])).collect()).unwrap();
        let data = labelled(10, 150);
        let r = evaluate(
            &tree,
            &Random(ChaCha8Rng::seed_from_u64(3).into(), 10),
            &data,
            &raw_pipeline(),
        )
        .unwrap();
        assert!((r.accuracy - 0.1).abs() <= 0.03, "{}", r.accuracy);
        assert_eq!(r.correct as f64 / r.total as f64, r.accuracy);
    }

    #[test]
    fn missing_network_names_the_node() {
        let tree = reference();
        let map: BTreeMap<String, NodeNetwork> = BTreeMap::new();
        let img = Image::filled(ImageShape::new(1, 1, 1), 0.0);
        match infer_image(&tree, &map, &img).unwrap_err() {
            Error::MissingCheckpoint(n) => assert_eq!(n, "0"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn verdicts() {
        let c = Claims {
            dataset: "cifar10".into(),
            accuracy: 91.99,
        };
        assert_eq!(judge("cifar10", 0.9199, Some(&c), 0.1).verdict, Verdict::Pass);
        assert_eq!(judge("cifar10", 0.9240, Some(&c), 0.5).verdict, Verdict::Pass);
        let bad = judge("cifar10", 0.10, Some(&c), 0.1);
        assert_eq!(bad.verdict, Verdict::Fail);
        assert!((bad.gap.unwrap() - 81.99).abs() < 1e-9);
        assert_eq!(judge("cifar10", 0.5, None, 0.1).verdict, Verdict::Unverifiable);
    }
}
