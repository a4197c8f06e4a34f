//! README scaffolding from finished builds.
//!
//! The output depends only on files in the build directories, so regenerating
//! without changes yields identical bytes.

use std::path::{Path, PathBuf};

use crate::config::{load_config, ExperimentConfig};
use crate::error::{fsx, Error, Result};
use crate::evaluator::{EvalResult, EVAL_FILE};
use crate::trainer::{BuildReport, BUILD_FILE, CONFIG_FILE, NODES_DIR, TREE_FILE};
use crate::tree::fingerprint;

pub const PENDING: &str = "pending";

/// Section headings, in output order.
pub const SECTIONS: [&str; 6] = [
    "Summary",
    "Environment setup",
    "Training",
    "Inference",
    "Pre-trained weights",
    "Results",
];

/// What the README needs to know about one build.
#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub build_dir: PathBuf,
    pub config: ExperimentConfig,
    pub report: BuildReport,
    pub eval: Option<EvalResult>,
}

impl BuildSummary {
    pub fn load(build_dir: &Path) -> Result<Self> {
        let build = build_dir.join(BUILD_FILE);
        if !build.exists() {
            return Err(Error::Eval(format!("no completed build in {}", build_dir.display())));
        }
        let report: BuildReport = serde_json::from_str(&fsx::read_to_string(&build)?)?;
        let config = load_config(build_dir.join(CONFIG_FILE))?;
        let eval_path = build_dir.join(EVAL_FILE);
        let eval = if eval_path.exists() {
            Some(EvalResult::load(&eval_path)?)
        } else {
            None
        };
        Ok(BuildSummary {
            build_dir: build_dir.to_path_buf(),
            config,
            report,
            eval,
        })
    }

    fn dataset(&self) -> String {
        self.config
            .dataset
            .map(|d| d.as_str().to_string())
            .unwrap_or_else(|| self.report.tree.dataset.clone())
    }

    fn backbone(&self) -> String {
        self.config
            .model_backbone
            .map(|b| b.as_str().to_string())
            .unwrap_or_default()
    }
}

fn unix(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn command_block(lines: &[String]) -> String {
    format!("```bash\n{}\n```\n", lines.join("\n"))
}

/// Markdown README for `builds`.
pub fn render_readme(builds: &[BuildSummary]) -> Result<String> {
    let mut md = String::from("# Project title\n\n");

    md.push_str(&format!("## {}\n\n", SECTIONS[0]));
    md.push_str("_Summarize the work here: the problem, the approach, and the headline result._\n\n");

    md.push_str(&format!("## {}\n\n", SECTIONS[1]));
    md.push_str(&command_block(&[
        "# To install software dependencies using Pip".into(),
        "pip install -r requirements.txt".into(),
        String::new(),
        "# To install software dependencies using Conda".into(),
        "conda env create -f environment.yml".into(),
        "conda activate trunk".into(),
    ]));
    md.push('\n');

    md.push_str(&format!("## {}\n\n", SECTIONS[2]));
    let train: Vec<String> = builds
        .iter()
        .map(|b| {
            format!(
                "trunk --train --dataset {} --model_backbone {} --grouping_volatility {} --build_dir {}",
                b.dataset(),
                b.backbone(),
                b.config.training.grouping_volatility,
                unix(&b.build_dir)
            )
        })
        .collect();
    md.push_str(&command_block(&train));
    md.push('\n');

    md.push_str(&format!("## {}\n\n", SECTIONS[3]));
    let infer: Vec<String> = builds
        .iter()
        .map(|b| {
            format!(
                "trunk --infer --dataset {} --model_backbone {} --build_dir {}",
                b.dataset(),
                b.backbone(),
                unix(&b.build_dir)
            )
        })
        .collect();
    md.push_str(&command_block(&infer));
    md.push('\n');

    md.push_str(&format!("## {}\n\n", SECTIONS[4]));
    md.push_str("| Dataset | Backbone | Nodes | Tree fingerprint | Weights |\n");
    md.push_str("|---|---|---|---|---|\n");
    for b in builds {
        let fp = fingerprint(&b.report.tree)?;
        let dir = unix(&b.build_dir);
        md.push_str(&format!(
            "| {} | {} | {} | `{}` | [{dir}/{NODES_DIR}]({dir}/{NODES_DIR}) ([tree]({dir}/{TREE_FILE})) |\n",
            b.dataset(),
            b.backbone(),
            b.report.node_reports.len(),
            &fp[..12],
        ));
    }
    md.push('\n');

    md.push_str(&format!("## {}\n\n", SECTIONS[5]));
    md.push_str("| Dataset | Accuracy (%) | FLOPs per image | Time (s) |\n");
    md.push_str("|---|---|---|---|\n");
    for b in builds {
        let (acc, flops, time) = match &b.eval {
            Some(e) => (
                format!("{:.2}", e.accuracy * 100.0),
                format!("{:.0}", e.mean_flops_per_image),
                format!("{:.2}", e.total_time),
            ),
            None => (PENDING.into(), PENDING.into(), PENDING.into()),
        };
        md.push_str(&format!("| {} | {acc} | {flops} | {time} |\n", b.dataset()));
    }
    if builds.iter().any(|b| b.report.surrogate_data) {
        md.push_str("\nRows built on synthetic stand-in data are not comparable to published numbers.\n");
    }
    Ok(md)
}

/// Write a README for the builds in `build_dirs` to `output_path`.
pub fn report_scaffold_all(build_dirs: &[PathBuf], output_path: &Path) -> Result<()> {
    let builds = build_dirs
        .iter()
        .map(|d| BuildSummary::load(d))
        .collect::<Result<Vec<_>>>()?;
    fsx::write_atomic(output_path, render_readme(&builds)?)
}

pub fn report_scaffold(build_dir: &Path, output_path: &Path) -> Result<()> {
    report_scaffold_all(&[build_dir.to_path_buf()], output_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Trunk;

    fn summary(eval: Option<f64>) -> BuildSummary {
        let config = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/svhn.yaml")).unwrap();
        let mut tree = Trunk::new("svhn", (0..10).map(|i| i.to_string()).collect(), 1.02, "test");
        tree.split("0", (0..10).map(|c| [c].into()).collect()).unwrap();
        BuildSummary {
            build_dir: PathBuf::from("runs/svhn"),
            report: BuildReport {
                tree,
                node_reports: vec![],
                config_digest: config.digest(),
                seed: 42,
                total_wall_time: 1.0,
                manifest: "manifest.json".into(),
                surrogate_data: false,
                data_caps: Default::default(),
            },
            config,
            eval: eval.map(|a| EvalResult {
                dataset: "svhn".into(),
                accuracy: a,
                correct: 0,
                total: 0,
                total_time: 3.25,
                load_time: 0.0,
                mean_flops_per_image: 1234.0,
                all_internal_flops: 1234,
                per_category_accuracy: Default::default(),
                per_category_correct: Default::default(),
                path_length_histogram: Default::default(),
            }),
        }
    }

    #[test]
    fn sections_in_order() {
        let md = render_readme(&[summary(Some(0.9))]).unwrap();
        let pos: Vec<usize> = SECTIONS
            .iter()
            .map(|s| md.find(&format!("## {s}\n")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(md.contains("pip install -r requirements.txt"));
        assert!(md.contains("conda env create -f environment.yml"));
        assert!(md.contains("| svhn | 90.00 | 1234 | 3.25 |"));
        assert!(md.contains("trunk --train --dataset svhn --model_backbone mobilenet --grouping_volatility 0.7"));
    }

    #[test]
    fn missing_eval_is_pending() {
        let md = render_readme(&[summary(None)]).unwrap();
        assert!(md.contains("| svhn | pending | pending | pending |"));
    }

    #[test]
    fn deterministic_bytes() {
        assert_eq!(
            render_readme(&[summary(Some(0.5))]).unwrap(),
            render_readme(&[summary(Some(0.5))]).unwrap()
        );
    }
}
