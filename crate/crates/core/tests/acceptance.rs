//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails. Criteria that need resources this environment lacks
//! (published datasets, pre-trained weights, GPUs) report FAIL with the reason
//! and are listed in `NEEDS_EXTERNAL`; any other failure fails the target.

#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trunk::config::{load_config, regimes, shipped_config, DatasetName, ExperimentConfig, NormMode, Split};
use trunk::data::{build_pipeline, compute_normalization_stats, data_root};
use trunk::envkit::{self, DependencySet, Pin};
use trunk::evaluator::{judge, verify_pretrained, Claims, Verdict};
use trunk::model::{count_flops, nll_loss, LayerSpec, Network};
use trunk::sim::{group_categories, gv_range, SimilarityMatrix};
use trunk::sweep::{read_records, run_sweep, SweepOptions, SweepSpec, SweepValues, CSV_FILE, RECORDS_FILE};
use trunk::tensor::{ImageShape, Tensor};
use trunk::tree::{fingerprint, validate};

use common::*;

/// Criteria that cannot be met without external resources.
const NEEDS_EXTERNAL: &[&str] = &["pipeline construction", "full-scale harness"];

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_stochastic(k: usize, rng: &mut ChaCha8Rng) -> SimilarityMatrix {
    let rows = (0..k)
        .map(|_| {
            let r: Vec<f64> = (0..k).map(|_| rng.gen_range(0.001..1.0)).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect();
    SimilarityMatrix::indexed(rows).unwrap()
}

/// Connected components of the merge relation by transitive closure.
fn closure_oracle(s: &SimilarityMatrix, gv: f64) -> Vec<BTreeSet<usize>> {
    let k = s.k();
    let mut r = vec![vec![false; k]; k];
    for i in 0..k {
        for j in 0..k {
            r[i][j] = i == j || (s.entries[i][j] + s.entries[j][i]) / 2.0 > gv / k as f64;
        }
    }
    for m in 0..k {
        for i in 0..k {
            for j in 0..k {
                r[i][j] |= r[i][m] && r[m][j];
            }
        }
    }
    let mut sets: Vec<BTreeSet<usize>> = (0..k).map(|i| (0..k).filter(|&j| r[i][j]).collect()).collect();
    sets.sort_by_key(|s| *s.iter().next().unwrap());
    sets.dedup();
    sets
}

fn grouping_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for case in 0..500 {
        let k = rng.gen_range(2..=6);
        let s = random_stochastic(k, &mut rng);
        let gv = rng.gen_range(0.5..=1.5);
        let got = group_categories(&s, gv).map_err(|e| e.to_string())?.partition;
        ensure(got == closure_oracle(&s, gv), format!("case {case}: k={k} gv={gv}"))?;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.2}s"))?;
    Ok(format!("500/500 match, {secs:.3}s"))
}

fn gv_monotonicity() -> Check {
    let gvs = gv_range(0.60, 1.20, 0.03);
    ensure(gvs.len() == 21, format!("{} grid points", gvs.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut violations = 0;
    for _ in 0..100 {
        let k = rng.gen_range(2..=10);
        let s = random_stochastic(k, &mut rng);
        let gs: Vec<_> = gvs.iter().map(|&g| group_categories(&s, g).unwrap()).collect();
        for w in gs.windows(2) {
            if w[1].len() < w[0].len() || !w[1].refines(&w[0]) {
                violations += 1;
            }
        }
    }
    ensure(violations == 0, format!("{violations} violations"))?;
    Ok("100 matrices x 21 points, 0 violations".into())
}

fn desk_build(dir: &Path) -> Check {
    let t0 = Instant::now();
    let config = desk_config();
    let synth = config.synthetic.as_ref().unwrap();
    let images = synth.num_categories * (synth.train_per_category + synth.test_per_category);
    ensure(images <= 2000, format!("{images} images"))?;
    ensure(config.training.epochs <= 5, "too many epochs")?;
    let (report, eval) = build_and_eval(&config, dir, &Default::default());
    let violations = validate(&report.tree);
    ensure(violations.is_empty(), format!("invalid tree: {violations:?}"))?;
    let leaves = report.tree.leaves().count();
    ensure(leaves == 4, format!("{leaves} leaves"))?;
    ensure(eval.accuracy >= 0.90, format!("accuracy {:.4}", eval.accuracy))?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "4 leaves, depth {}, accuracy {:.4}, {secs:.1}s",
        report.tree.depth(),
        eval.accuracy
    ))
}

fn determinism(first: &Path, second: &Path) -> Check {
    let config = desk_config();
    ensure(
        config.seed == 42 && config.deterministic,
        "config is not seed 42 / deterministic",
    )?;
    let a: trunk::trainer::BuildReport = serde_json::from_str(
        &std::fs::read_to_string(first.join(trunk::trainer::BUILD_FILE)).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let b = trunk::trainer::build_and_train(&config, second, &Default::default()).map_err(|e| e.to_string())?;
    let (fa, fb) = (fingerprint(&a.tree).unwrap(), fingerprint(&b.tree).unwrap());
    ensure(fa == fb, format!("fingerprints differ: {fa} vs {fb}"))?;
    let la: Vec<u64> = a.node_reports.iter().map(|r| r.final_train_loss.to_bits()).collect();
    let lb: Vec<u64> = b.node_reports.iter().map(|r| r.final_train_loss.to_bits()).collect();
    ensure(la == lb, "final losses differ")?;
    Ok(format!("fingerprint {}, {} identical node losses", &fa[..12], la.len()))
}

fn config_fidelity() -> Check {
    let path = crate_dir().join("configs/svhn.yaml");
    let c = load_config(&path).map_err(|e| e.to_string())?;
    let t = &c.training;
    let sched = &t.lr_scheduler;
    let checks = [
        (c.seed == 42, "seed"),
        (c.splits.get(Split::Train).batch_size == 16, "train batch size"),
        (
            c.splits.get(Split::Validation).batch_size == 16,
            "validation batch size",
        ),
        (c.splits.get(Split::Test).batch_size == 1, "test batch size"),
        (t.grouping_volatility == 0.70, "grouping volatility"),
        (t.optimizer.kind.as_str() == "Adam", "optimizer"),
        (t.optimizer.lr == 0.005, "lr"),
        (t.optimizer.weight_decay == 0.0005, "weight decay"),
        (sched.kind.as_str() == "CosineAnnealingLR", "scheduler"),
        (
            sched.t_max == Some(10) && sched.eta_min == Some(0.0),
            "scheduler params",
        ),
        (t.epochs == 20, "epochs"),
    ];
    for (ok, what) in checks {
        ensure(ok, format!("{what} mismatch"))?;
    }
    let once = c.to_yaml_string();
    let again = ExperimentConfig::from_yaml_str(&once, "round-trip").map_err(|e| e.to_string())?;
    ensure(
        again == c && again.to_yaml_string() == once,
        "round trip is not byte-stable",
    )?;
    Ok("11 values exact, YAML round trip byte-stable".into())
}

fn render_regime(c: &ExperimentConfig) -> String {
    let pipeline = build_pipeline(&c.splits.train.transforms, ImageShape::new(3, 32, 32)).unwrap();
    let mut s = format!(
        "lr: {}\nbatch_size: {}\ngrouping_volatility: {}\npipeline:\n",
        c.training.optimizer.lr, c.splits.train.batch_size, c.training.grouping_volatility
    );
    for line in pipeline.describe() {
        s.push_str(&format!("- {line}\n"));
    }
    s
}

fn pipeline_construction() -> Check {
    let base = shipped_config(DatasetName::Cifar10);
    for r in regimes::all() {
        let golden = std::fs::read_to_string(fixture(&format!("golden/regimes/tr{}.txt", r.id))).unwrap();
        let got = render_regime(&r.apply(&base).map_err(|e| e.to_string())?);
        ensure(got == golden, format!("{} differs from golden:\n{got}", r.name()))?;
    }
    let root = data_root();
    let stats = compute_normalization_stats(&base, &root)
        .map_err(|e| format!("TR1-TR6 goldens match; CIFAR-10 stats not recomputed: {e}"))?;
    let (mean, std) = ([0.49, 0.48, 0.45], [0.25, 0.24, 0.26]);
    for ch in 0..3 {
        ensure(
            (stats.mean[ch] - mean[ch]).abs() <= 0.01 && (stats.std[ch] - std[ch]).abs() <= 0.01,
            format!("channel {ch}: {:?} / {:?}", stats.mean, stats.std),
        )?;
    }
    Ok("TR1-TR6 goldens match; CIFAR-10 stats within 0.01".into())
}

fn manifest_goldens() -> Check {
    let src = fixture("fixtures/toy_src");
    let deps = envkit::scan_imports(&src).map_err(|e| e.to_string())?;
    ensure(
        deps == DependencySet::from_names(["numpy", "scipy", "torch", "torchvision"]),
        format!("scanned {:?}", deps.names),
    )?;
    let pip = envkit::emit_pip_manifest(&deps.clone().with_find_links("https://download.pytorch.org/whl/cu121"));
    ensure(
        pip == std::fs::read_to_string(fixture("golden/manifests/requirements.txt")).unwrap(),
        "pip manifest differs",
    )?;

    let conda_deps = deps
        .with_pin("python", Pin::build("3.9.18", "h955ad1f_0"))
        .with_pin("torch", Pin::build("2.3.0", "py3.9_cuda12.1_cudnn8.9.2_0"))
        .with_pin("pytorch-cuda", Pin::build("12.1", "ha16c6d3_5"))
        .with_pin("torchvision", Pin::build("0.18.0", "py39_cu121"));
    let channels: Vec<String> = ["pytorch", "nvidia", "defaults"].map(String::from).to_vec();
    let conda = envkit::emit_conda_manifest(&conda_deps, "trunk", &channels, &["scipy".to_string()].into());
    ensure(
        conda == std::fs::read_to_string(fixture("golden/manifests/environment.yml")).unwrap(),
        "conda manifest differs",
    )?;

    let report =
        envkit::validate_manifest(&fixture("fixtures/bloated_requirements.txt"), &src).map_err(|e| e.to_string())?;
    let expected: BTreeSet<String> = ["anaconda-client", "blaze", "clyent"].map(String::from).into();
    ensure(report.extra == expected, format!("extra = {:?}", report.extra))?;
    ensure(report.missing.is_empty(), format!("missing = {:?}", report.missing))?;
    Ok("pip and conda byte-identical; extra = {anaconda-client, blaze, clyent}".into())
}

fn random_block(r: &mut ChaCha8Rng) -> LayerSpec {
    match r.gen_range(0..6) {
        0 => LayerSpec::Conv {
            out_channels: r.gen_range(1..6),
            kernel: r.gen_range(1..4),
            stride: r.gen_range(1..3),
            padding: r.gen_range(0..2),
        },
        1 => LayerSpec::DepthwiseConv {
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        2 => LayerSpec::Norm { mode: None },
        3 => LayerSpec::Relu,
        4 => LayerSpec::MaxPool {
            kernel: 2,
            stride: None,
        },
        _ => LayerSpec::Conv {
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
    }
}

fn flops_oracle() -> Check {
    let shape = ImageShape::new(3, 32, 32);
    let conv = [LayerSpec::Conv {
        out_channels: 8,
        kernel: 3,
        stride: 1,
        padding: 1,
    }];
    let net = Network::build(&conv, shape, NormMode::Batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let hand = 2 * 8 * 32 * 32 * (3 * 3 * 3);
    let got = count_flops(&net, shape).unwrap();
    ensure(got == hand && got == 442_368, format!("{got} vs {hand}"))?;

    let mut r = ChaCha8Rng::seed_from_u64(50);
    let mut checked = 0;
    while checked < 50 {
        let input = ImageShape::new(r.gen_range(1..4), 16, 16);
        let a: Vec<LayerSpec> = (0..r.gen_range(1..4)).map(|_| random_block(&mut r)).collect();
        let b: Vec<LayerSpec> = (0..r.gen_range(1..4)).map(|_| random_block(&mut r)).collect();
        let ab: Vec<LayerSpec> = a.iter().chain(&b).cloned().collect();
        let Ok(both) = Network::build(&ab, input, NormMode::Batch, &mut r) else {
            continue;
        };
        let na = Network::build(&a, input, NormMode::Batch, &mut r).unwrap();
        let mid = na.output_shape();
        let nb = Network::build(&b, mid, NormMode::Batch, &mut r).unwrap();
        let (whole, parts) = (
            count_flops(&both, input).unwrap(),
            count_flops(&na, input).unwrap() + count_flops(&nb, mid).unwrap(),
        );
        ensure(whole == parts, format!("network {checked}: {whole} vs {parts}"))?;
        checked += 1;
    }
    Ok("442,368 by hand formula; 50/50 two-stage networks additive".into())
}

fn hierarchical_efficiency(dir: &Path) -> Check {
    let config = desk_config();
    let tree = trunk::tree::load_tree(&dir.join(trunk::trainer::TREE_FILE)).map_err(|e| e.to_string())?;
    let root_children = tree.root().children.len();
    ensure(root_children >= 2, format!("root has {root_children} children"))?;
    let eval =
        trunk::evaluator::evaluate_build(&config, dir, &data_root(), &Default::default()).map_err(|e| e.to_string())?;
    ensure(
        eval.mean_flops_per_image < eval.all_internal_flops as f64,
        format!("{} >= {}", eval.mean_flops_per_image, eval.all_internal_flops),
    )?;
    Ok(format!(
        "mean {:.0} < all internal {}",
        eval.mean_flops_per_image, eval.all_internal_flops
    ))
}

fn loss_of(net: &mut Network, x: &Tensor, labels: &[usize]) -> f64 {
    let (logits, _) = net.forward_train(x);
    nll_loss(&logits, labels).0
}

fn gradient_check() -> Check {
    let shape = ImageShape::new(2, 5, 5);
    let blocks = [
        LayerSpec::Conv {
            out_channels: 3,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        LayerSpec::Norm { mode: None },
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Linear { out_features: 3 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = Network::build(&blocks, shape, NormMode::Batch, &mut rng).unwrap();
    let n = 4;
    let x = Tensor {
        n,
        c: shape.channels,
        h: shape.height,
        w: shape.width,
        data: (0..n * shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let labels = [0, 1, 2, 1];

    net.zero_grad();
    let (logits, trace) = net.forward_train(&x);
    let (_, dy) = nll_loss(&logits, &labels);
    net.backward(&trace, dy);
    let analytic: Vec<Vec<f64>> = net.params_mut().iter().map(|p| p.grad.clone()).collect();
    let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();

    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.gen_range(0..sizes.len());
        let i = rng.gen_range(0..sizes[t]);
        let orig = net.params_mut()[t].value[i];
        net.params_mut()[t].value[i] = orig + eps;
        let up = loss_of(&mut net, &x, &labels);
        net.params_mut()[t].value[i] = orig - eps;
        let down = loss_of(&mut net, &x, &labels);
        net.params_mut()[t].value[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[t][i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    ensure(worst < 1e-3, format!("worst relative error {worst:.3e}"))?;
    Ok(format!("100 coordinates, worst relative error {worst:.2e}"))
}

fn sweep_durability(dir: &Path) -> Check {
    let values: Vec<String> = ["0.005", "0.01", "0.02", "0.04", "0.08", "1.0"]
        .map(String::from)
        .to_vec();
    let spec = SweepSpec::new(
        quick_config(),
        "training.grouping_volatility",
        SweepValues::List(values),
    );
    let mut opts = SweepOptions {
        build: quick_options(),
        stop_after_points: Some(3),
    };
    match run_sweep(&spec, dir, &opts) {
        Err(trunk::Error::Interrupted { completed: 3 }) => {}
        other => return Err(format!("expected interruption after 3 points, got {other:?}")),
    }
    let before = std::fs::read_to_string(dir.join(RECORDS_FILE)).unwrap();
    ensure(
        before.lines().count() == 3,
        format!("{} records after kill", before.lines().count()),
    )?;
    opts.stop_after_points = None;
    let records = run_sweep(&spec, dir, &opts).map_err(|e| e.to_string())?;
    let after = std::fs::read_to_string(dir.join(RECORDS_FILE)).unwrap();
    ensure(after.starts_with(&before), "first 3 records changed on resume")?;
    ensure(
        records.len() == 6 && read_records(dir).unwrap().len() == 6,
        "not 6 records",
    )?;
    let csv_lines = std::fs::read_to_string(dir.join(CSV_FILE)).unwrap().lines().count();
    ensure(csv_lines == 7, format!("{csv_lines} CSV lines"))?;
    Ok("3 records kept byte-identical, 6 on completion, CSV 7 lines".into())
}

fn full_scale_harness() -> Check {
    let expected = [("emnist", 85.77), ("cifar10", 91.99), ("svhn", 96.75)];
    for (ds, acc) in expected {
        let c = Claims::load(&crate_dir().join(format!("reference/claims/{ds}.json"))).map_err(|e| e.to_string())?;
        ensure(
            c.dataset == ds && c.accuracy == acc,
            format!("{ds} claim is {}", c.accuracy),
        )?;
    }
    ensure(
        crate_dir().join("examples/verify_pretrained.rs").exists(),
        "harness example missing",
    )?;
    let claim = Claims {
        dataset: "svhn".into(),
        accuracy: 96.75,
    };
    ensure(
        judge("svhn", 0.9670, Some(&claim), 0.1).verdict == Verdict::Pass,
        "judge rejects a 0.05 gap",
    )?;
    ensure(
        judge("svhn", 0.9660, Some(&claim), 0.1).verdict == Verdict::Fail,
        "judge accepts a 0.15 gap",
    )?;
    let weights = std::env::var("TRUNK_PRETRAINED_DIR").unwrap_or_default();
    if weights.is_empty() {
        return Err(
            "harness and claims (85.77/91.99/96.75) in place; targets not verified: \
                    no published weights or GPUs here (set TRUNK_PRETRAINED_DIR to run)"
                .into(),
        );
    }
    let mut worst = 0.0f64;
    for (ds, _) in expected {
        let dir = Path::new(&weights).join(ds);
        let config = shipped_config(ds.parse::<DatasetName>().unwrap());
        let report = verify_pretrained(
            &dir,
            &dir.join("tree.json"),
            &config,
            &crate_dir().join(format!("reference/claims/{ds}.json")),
            0.1,
            &data_root(),
            &Default::default(),
        )
        .map_err(|e| format!("{ds}: {e}"))?;
        ensure(report.verdict == Verdict::Pass, format!("{ds}: {:?}", report))?;
        worst = worst.max(report.gap.unwrap_or(f64::INFINITY));
    }
    Ok(format!("all three within 0.1 (worst gap {worst:.3})"))
}

type Criterion<'a> = Box<dyn Fn() -> Check + 'a>;

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let (first, second) = (tmp.path().join("desk-a"), tmp.path().join("desk-b"));
    let sweep_dir = tmp.path().join("sweep");

    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("grouping oracle equivalence", Box::new(grouping_oracle)),
        ("GV monotonicity", Box::new(gv_monotonicity)),
        ("end-to-end desk build", Box::new(|| desk_build(&first))),
        ("determinism", Box::new(|| determinism(&first, &second))),
        ("config fidelity", Box::new(config_fidelity)),
        ("pipeline construction", Box::new(pipeline_construction)),
        ("manifest goldens", Box::new(manifest_goldens)),
        ("FLOPs oracle", Box::new(flops_oracle)),
        ("hierarchical efficiency", Box::new(|| hierarchical_efficiency(&first))),
        ("gradient check", Box::new(gradient_check)),
        ("sweep durability", Box::new(|| sweep_durability(&sweep_dir))),
        ("full-scale harness", Box::new(full_scale_harness)),
    ];

    let mut unexpected = vec![];
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                let note = if NEEDS_EXTERNAL.contains(name) {
                    " [needs external resources]"
                } else {
                    ""
                };
                println!("FAIL  {name}: {why}{note}");
                if note.is_empty() {
                    unexpected.push(*name);
                }
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
