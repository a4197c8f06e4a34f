//! Environment manifests derived from what a Python source tree actually imports.
//!
//! Scanning is static: files are never executed, and dynamic imports are reported
//! rather than guessed.

mod stdlib;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{fsx, Error, Result};

pub use stdlib::PYTHON_VERSION;

/// Distribution names that describe the interpreter or accelerator runtime rather
/// than an importable library. They never count as extra.
pub const ENVIRONMENT_PACKAGES: &[&str] = &[
    "python",
    "pip",
    "setuptools",
    "wheel",
    "pytorch-cuda",
    "cudatoolkit",
    "cuda-toolkit",
    "cudnn",
    "cuda-version",
    "mkl",
    "blas",
    "libgcc-ng",
    "libstdcxx-ng",
];

/// Frameworks whose default wheels are CPU-only or CUDA-version specific.
const GPU_FRAMEWORKS: &[&str] = &["torch", "tensorflow", "jax"];

/// Pip distribution name to conda package name.
const CONDA_ALIASES: &[(&str, &str)] = &[("torch", "pytorch")];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pin {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build: Option<String>,
}

impl Pin {
    pub fn version(v: impl Into<String>) -> Self {
        Pin {
            version: v.into(),
            build: None,
        }
    }

    pub fn build(v: impl Into<String>, build: impl Into<String>) -> Self {
        Pin {
            version: v.into(),
            build: Some(build.into()),
        }
    }
}

/// Top-level external distributions a project needs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencySet {
    pub names: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub find_links: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pins: BTreeMap<String, Pin>,
}

impl DependencySet {
    pub fn from_names<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        DependencySet {
            names: names.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn with_find_links(mut self, url: impl Into<String>) -> Self {
        self.find_links = Some(url.into());
        self
    }

    pub fn with_pin(mut self, name: &str, pin: Pin) -> Self {
        self.names.insert(name.to_string());
        self.pins.insert(name.to_string(), pin);
        self
    }
}

/// Import name to distribution name table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportMap(BTreeMap<String, String>);

impl ImportMap {
    /// Common cases where the import name differs from the distribution, plus
    /// identity entries for well-known packages so they are not flagged as unmapped.
    pub fn shipped() -> Self {
        let renamed = [
            ("sklearn", "scikit-learn"),
            ("skimage", "scikit-image"),
            ("cv2", "opencv-python"),
            ("PIL", "Pillow"),
            ("yaml", "PyYAML"),
            ("bs4", "beautifulsoup4"),
            ("attr", "attrs"),
            ("dateutil", "python-dateutil"),
            ("dotenv", "python-dotenv"),
            ("Crypto", "pycryptodome"),
            ("serial", "pyserial"),
            ("usb", "pyusb"),
            ("jwt", "PyJWT"),
            ("git", "GitPython"),
            ("fitz", "PyMuPDF"),
            ("docx", "python-docx"),
            ("zmq", "pyzmq"),
            ("OpenSSL", "pyOpenSSL"),
            ("MySQLdb", "mysqlclient"),
            ("wx", "wxPython"),
        ];
        let identity = [
            "numpy",
            "scipy",
            "torch",
            "torchvision",
            "torchaudio",
            "pandas",
            "matplotlib",
            "seaborn",
            "tqdm",
            "requests",
            "jax",
            "flax",
            "tensorflow",
            "keras",
            "h5py",
            "networkx",
            "sympy",
            "pytest",
            "tensorboard",
            "transformers",
            "einops",
            "timm",
            "graphviz",
            "pydot",
            "thop",
            "ptflops",
            "fvcore",
            "wandb",
            "psutil",
            "numba",
            "joblib",
            "click",
            "rich",
            "pydantic",
        ];
        let mut map: BTreeMap<String, String> = renamed.iter().map(|(i, d)| (i.to_string(), d.to_string())).collect();
        map.extend(identity.iter().map(|n| (n.to_string(), n.to_string())));
        ImportMap(map)
    }

    pub fn with(mut self, import: &str, distribution: &str) -> Self {
        self.0.insert(import.into(), distribution.into());
        self
    }

    /// Extend with a YAML mapping of `import: distribution` pairs.
    pub fn extend_from_yaml(mut self, path: &Path) -> Result<Self> {
        let text = fsx::read_to_string(path)?;
        let extra: BTreeMap<String, String> =
            serde_yaml::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        self.0.extend(extra);
        Ok(self)
    }

    pub fn get(&self, import: &str) -> Option<&str> {
        self.0.get(import).map(String::as_str)
    }
}

impl Default for ImportMap {
    fn default() -> Self {
        Self::shipped()
    }
}

/// Full result of a source scan.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScanReport {
    pub deps: DependencySet,
    pub files_scanned: usize,
    /// `path:line` locations of `__import__` / `importlib.import_module` calls.
    pub unresolvable: Vec<String>,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn is_stdlib(module: &str) -> bool {
    stdlib::STDLIB.binary_search(&module).is_ok()
}

/// PEP 503 normalized form of a distribution name.
pub fn normalize(name: &str) -> String {
    static SEP: OnceLock<Regex> = OnceLock::new();
    SEP.get_or_init(|| Regex::new(r"[-_.]+").unwrap())
        .replace_all(name, "-")
        .to_lowercase()
}

fn conda_name(name: &str) -> &str {
    CONDA_ALIASES
        .iter()
        .find(|(pip, _)| pip.eq_ignore_ascii_case(name))
        .map(|(_, conda)| *conda)
        .unwrap_or(name)
}

fn pip_name(name: &str) -> &str {
    CONDA_ALIASES
        .iter()
        .find(|(_, conda)| conda.eq_ignore_ascii_case(name))
        .map(|(pip, _)| *pip)
        .unwrap_or(name)
}

fn skipped_dir(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    (name.starts_with('.') && name.len() > 1)
        || matches!(name, "__pycache__" | "site-packages" | "node_modules")
        || path.join("pyvenv.cfg").exists()
}

fn python_files(root: &Path, warnings: &mut Vec<String>) -> Vec<PathBuf> {
    let mut files = vec![];
    let walker = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_type().is_dir() || !skipped_dir(e.path()));
    for entry in walker {
        match entry {
            Ok(e)
                if (e.file_type().is_file() || e.path_is_symlink())
                    && e.path().extension().is_some_and(|x| x == "py") =>
            {
                files.push(e.into_path())
            }
            Ok(_) => {}
            Err(e) => warnings.push(format!("skipped: {e}")),
        }
    }
    files
}

/// Top-level module names defined inside `root`: every `.py` stem and every
/// directory that holds Python files.
fn internal_modules(root: &Path, files: &[PathBuf]) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for f in files {
        if let Some(stem) = f.file_stem().and_then(|s| s.to_str()) {
            names.insert(stem.to_string());
        }
        let mut dir = f.parent();
        while let Some(d) = dir {
            if d == root || !d.starts_with(root) {
                break;
            }
            if let Some(n) = d.file_name().and_then(|s| s.to_str()) {
                names.insert(n.to_string());
            }
            dir = d.parent();
        }
    }
    names
}

/// Replace comments and string literals with blanks, keeping line structure.
fn strip_strings_and_comments(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '"' || c == '\'' {
            let triple = i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c;
            let width = if triple { 3 } else { 1 };
            i += width;
            out.push_str("\"\"");
            while i < chars.len() {
                if chars[i] == '\\' {
                    i += 2;
                    continue;
                }
                if chars[i] == '\n' {
                    out.push('\n');
                    if !triple {
                        i += 1;
                        break;
                    }
                }
                if chars[i] == c && (!triple || (i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c)) {
                    i += width;
                    break;
                }
                i += 1;
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

#[derive(Debug, Default, PartialEq, Eq)]
struct FileImports {
    modules: BTreeSet<String>,
    dynamic_lines: Vec<usize>,
}

fn parse_imports(src: &str) -> FileImports {
    static IMPORT: OnceLock<Regex> = OnceLock::new();
    static FROM: OnceLock<Regex> = OnceLock::new();
    static DYNAMIC: OnceLock<Regex> = OnceLock::new();
    let import = IMPORT.get_or_init(|| Regex::new(r"^\s*import\s+(.+)$").unwrap());
    let from = FROM.get_or_init(|| Regex::new(r"^\s*from\s+(\S+)\s+import\b").unwrap());
    let dynamic = DYNAMIC.get_or_init(|| Regex::new(r"\b(__import__|import_module)\s*\(").unwrap());

    let code = strip_strings_and_comments(src);
    let mut found = FileImports::default();
    let mut logical = String::new();
    let mut start = 0;
    for (n, line) in code.lines().enumerate() {
        if logical.is_empty() {
            start = n + 1;
        }
        if let Some(head) = line.strip_suffix('\\') {
            logical.push_str(head);
            logical.push(' ');
            continue;
        }
        logical.push_str(line);
        let line = std::mem::take(&mut logical);
        if dynamic.is_match(&line) {
            found.dynamic_lines.push(start);
        }
        for stmt in line.split(';') {
            if let Some(m) = from.captures(stmt) {
                let module = &m[1];
                if !module.starts_with('.') {
                    found
                        .modules
                        .insert(module.split('.').next().unwrap_or(module).to_string());
                }
            } else if let Some(m) = import.captures(stmt) {
                for part in m[1].split(',') {
                    let name = part.split_whitespace().next().unwrap_or("");
                    let top = name.split('.').next().unwrap_or("");
                    if !top.is_empty() && top.chars().all(|c| c.is_alphanumeric() || c == '_') {
                        found.modules.insert(top.to_string());
                    }
                }
            }
        }
    }
    found
}

/// Scan every `.py` file under `root` with an explicit import map.
pub fn scan(root: &Path, map: &ImportMap) -> Result<ScanReport> {
    std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut report = ScanReport::default();
    let files = python_files(root, &mut report.warnings);
    let internal = internal_modules(root, &files);
    let mut imported = BTreeSet::new();
    for f in &files {
        let rel = f.strip_prefix(root).unwrap_or(f).display().to_string();
        let bytes = match std::fs::read(f) {
            Ok(b) => b,
            Err(e) => {
                report.warnings.push(format!("{rel}: unreadable: {e}"));
                continue;
            }
        };
        report.files_scanned += 1;
        let found = parse_imports(&String::from_utf8_lossy(&bytes));
        report
            .unresolvable
            .extend(found.dynamic_lines.iter().map(|l| format!("{rel}:{l}")));
        imported.extend(found.modules);
    }
    for module in imported {
        if is_stdlib(&module) || internal.contains(&module) {
            continue;
        }
        let dist = match map.get(&module) {
            Some(d) => d.to_string(),
            None => {
                report
                    .notes
                    .push(format!("{module}: no distribution mapping, using the import name"));
                module
            }
        };
        report.deps.names.insert(dist);
    }
    Ok(report)
}

/// Distributions directly imported by the Python sources under `root`.
pub fn scan_imports(root: &Path) -> Result<DependencySet> {
    Ok(scan(root, &ImportMap::shipped())?.deps)
}

pub fn emit_pip_manifest(deps: &DependencySet) -> String {
    let mut out = String::new();
    if let Some(url) = &deps.find_links {
        out.push_str(&format!("--find-links {url}\n"));
    }
    for name in &deps.names {
        match deps.pins.get(name) {
            Some(pin) => out.push_str(&format!("{name}=={}\n", pin.version)),
            None => out.push_str(&format!("{name}\n")),
        }
    }
    out
}

fn requirement_name() -> &'static Regex {
    static NAME: OnceLock<Regex> = OnceLock::new();
    NAME.get_or_init(|| Regex::new(r"^([A-Za-z0-9][A-Za-z0-9._-]*)").unwrap())
}

/// Parse a requirements file. Index options other than `--find-links` are
/// recorded as the link too; version specifiers other than `==` are dropped.
pub fn parse_pip_manifest(text: &str) -> Result<DependencySet> {
    let mut deps = DependencySet::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split(" #").next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('-') {
            let (flag, value) = line
                .split_once([' ', '='])
                .map(|(f, v)| (f, v.trim()))
                .unwrap_or((line, ""));
            match flag {
                "--find-links" | "-f" | "--extra-index-url" | "--index-url" | "-i" if !value.is_empty() => {
                    deps.find_links = Some(value.to_string())
                }
                _ => {
                    return Err(Error::Manifest(format!("line {}: unsupported option `{line}`", n + 1)));
                }
            }
            continue;
        }
        let name = requirement_name()
            .captures(line)
            .map(|m| m[1].to_string())
            .ok_or_else(|| Error::Manifest(format!("line {}: cannot parse requirement `{line}`", n + 1)))?;
        let rest = line[name.len()..].trim_start();
        let rest = rest
            .strip_prefix('[')
            .map(|r| r.split_once(']').map(|x| x.1).unwrap_or(""))
            .unwrap_or(rest);
        if let Some(v) = rest.trim_start().strip_prefix("==") {
            let v = v.split(';').next().unwrap_or("").trim();
            deps.pins.insert(name.clone(), Pin::version(v));
        }
        deps.names.insert(name);
    }
    Ok(deps)
}

/// Conda environment file contents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CondaManifest {
    pub name: String,
    pub channels: Vec<String>,
    pub deps: DependencySet,
    pub pip_section: BTreeSet<String>,
}

fn conda_entry(name: &str, pin: Option<&Pin>) -> String {
    let conda = conda_name(name);
    match pin {
        Some(Pin {
            version,
            build: Some(b),
        }) => format!("{conda}={version}={b}"),
        Some(Pin { version, build: None }) => format!("{conda}={version}"),
        None => conda.to_string(),
    }
}

/// Conda environment YAML. Names in `pip_section` go under a `pip:` entry; the
/// rest are conda packages, pinned as `name=version=build` when a build is known.
pub fn emit_conda_manifest(
    deps: &DependencySet,
    env_name: &str,
    channels: &[String],
    pip_section: &BTreeSet<String>,
) -> String {
    let mut out = format!("name: {env_name}\n");
    if channels.is_empty() {
        out.push_str("channels: []\n");
    } else {
        out.push_str("channels:\n");
        for c in channels {
            out.push_str(&format!("  - {c}\n"));
        }
    }
    let mut conda: Vec<(&str, String)> = deps
        .names
        .iter()
        .filter(|n| !pip_section.contains(*n))
        .map(|n| (conda_name(n), conda_entry(n, deps.pins.get(n))))
        .collect();
    conda.sort();
    let pip: Vec<&String> = deps.names.iter().filter(|n| pip_section.contains(*n)).collect();
    if conda.is_empty() && pip.is_empty() {
        return out;
    }
    out.push_str("dependencies:\n");
    for (_, entry) in conda {
        out.push_str(&format!("  - {entry}\n"));
    }
    if !pip.is_empty() {
        out.push_str("  - pip:\n");
        for name in pip {
            match deps.pins.get(name) {
                Some(p) => out.push_str(&format!("    - {name}=={}\n", p.version)),
                None => out.push_str(&format!("    - {name}\n")),
            }
        }
    }
    out
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawCondaDep {
    Spec(String),
    Pip { pip: Vec<String> },
}

#[derive(Deserialize)]
struct RawConda {
    #[serde(default)]
    name: String,
    #[serde(default)]
    channels: Vec<String>,
    #[serde(default)]
    dependencies: Vec<RawCondaDep>,
}

fn parse_conda_spec(spec: &str) -> Result<(String, Option<Pin>)> {
    let spec = spec.rsplit("::").next().unwrap_or(spec).trim();
    if let Some((name, version)) = spec.split_once("==") {
        return Ok((name.trim().to_string(), Some(Pin::version(version.trim()))));
    }
    let name = requirement_name()
        .captures(spec)
        .map(|m| m[1].to_string())
        .ok_or_else(|| Error::Manifest(format!("cannot parse conda dependency `{spec}`")))?;
    let mut parts = spec.splitn(3, '=');
    parts.next();
    let pin = match (parts.next(), parts.next()) {
        (Some(v), b) if spec[name.len()..].starts_with('=') && !v.is_empty() => Some(Pin {
            version: v.to_string(),
            build: b.map(str::to_string),
        }),
        _ => None,
    };
    Ok((name, pin))
}

pub fn parse_conda_manifest(text: &str) -> Result<CondaManifest> {
    let raw: RawConda = serde_yaml::from_str(text).map_err(|e| Error::Manifest(format!("conda yaml: {e}")))?;
    let mut m = CondaManifest {
        name: raw.name,
        channels: raw.channels,
        ..Default::default()
    };
    for dep in raw.dependencies {
        match dep {
            RawCondaDep::Spec(s) => {
                let (name, pin) = parse_conda_spec(&s)?;
                let name = pip_name(&name).to_string();
                if let Some(p) = pin {
                    m.deps.pins.insert(name.clone(), p);
                }
                m.deps.names.insert(name);
            }
            RawCondaDep::Pip { pip } => {
                let section = parse_pip_manifest(&pip.join("\n"))?;
                if section.find_links.is_some() {
                    m.deps.find_links = section.find_links;
                }
                m.pip_section.extend(section.names.iter().cloned());
                m.deps.names.extend(section.names);
                m.deps.pins.extend(section.pins);
            }
        }
    }
    Ok(m)
}

impl CondaManifest {
    pub fn emit(&self) -> String {
        emit_conda_manifest(&self.deps, &self.name, &self.channels, &self.pip_section)
    }
}

/// A manifest read from disk, in either format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Manifest {
    Pip(DependencySet),
    Conda(CondaManifest),
}

impl Manifest {
    /// `.yml`/`.yaml` files are conda environments; anything else is a requirements file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fsx::read_to_string(path)?;
        let conda = path.extension().is_some_and(|e| e == "yml" || e == "yaml");
        let parsed = if conda {
            parse_conda_manifest(&text).map(Manifest::Conda)
        } else {
            parse_pip_manifest(&text).map(Manifest::Pip)
        };
        parsed.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn deps(&self) -> &DependencySet {
        match self {
            Manifest::Pip(d) => d,
            Manifest::Conda(c) => &c.deps,
        }
    }

    /// True when the manifest points at a GPU wheel index, the nvidia channel,
    /// a CUDA runtime package or a CUDA build string.
    pub fn gpu_hint_present(&self) -> bool {
        static GPU_URL: OnceLock<Regex> = OnceLock::new();
        let gpu_url = GPU_URL.get_or_init(|| Regex::new(r"(?i)(/|\b)(cu\d{2,3}|rocm[\d.]*)\b").unwrap());
        let deps = self.deps();
        let link = deps.find_links.as_deref().is_some_and(|u| gpu_url.is_match(u));
        let runtime = deps
            .names
            .iter()
            .any(|n| matches!(normalize(n).as_str(), "pytorch-cuda" | "cudatoolkit" | "cuda-toolkit"));
        let build = deps
            .pins
            .values()
            .any(|p| p.build.as_deref().is_some_and(|b| b.to_lowercase().contains("cuda")));
        let channel = matches!(self, Manifest::Conda(c) if c.channels.iter().any(|ch| ch == "nvidia"));
        link || runtime || build || channel
    }
}

/// Differences between a manifest and the imports of a source tree.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestReport {
    pub missing: BTreeSet<String>,
    pub extra: BTreeSet<String>,
    pub gpu_hint_present: bool,
    pub warnings: Vec<String>,
}

impl ManifestReport {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty()
    }

    pub fn to_text(&self) -> String {
        let list = |s: &BTreeSet<String>| {
            if s.is_empty() {
                "none".to_string()
            } else {
                s.iter().cloned().collect::<Vec<_>>().join(", ")
            }
        };
        let mut out = format!(
            "missing: {}\nextra: {}\ngpu hint: {}\n",
            list(&self.missing),
            list(&self.extra),
            if self.gpu_hint_present { "yes" } else { "no" }
        );
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// Compare `manifest` against a scan of the sources.
pub fn compare(manifest: &Manifest, scan: &ScanReport) -> ManifestReport {
    let declared: BTreeMap<String, &String> = manifest.deps().names.iter().map(|n| (normalize(n), n)).collect();
    let imported: BTreeMap<String, &String> = scan.deps.names.iter().map(|n| (normalize(n), n)).collect();
    let ignored: BTreeSet<String> = ENVIRONMENT_PACKAGES.iter().map(|n| normalize(n)).collect();
    let mut report = ManifestReport {
        missing: imported
            .iter()
            .filter(|(k, _)| !declared.contains_key(*k))
            .map(|(_, v)| v.to_string())
            .collect(),
        extra: declared
            .iter()
            .filter(|(k, _)| !imported.contains_key(*k) && !ignored.contains(*k))
            .map(|(_, v)| v.to_string())
            .collect(),
        gpu_hint_present: manifest.gpu_hint_present(),
        warnings: scan.warnings.clone(),
    };
    let frameworks: Vec<&str> = GPU_FRAMEWORKS
        .iter()
        .copied()
        .filter(|f| declared.contains_key(*f) || imported.contains_key(*f))
        .collect();
    if !report.gpu_hint_present && !frameworks.is_empty() {
        report.warnings.push(format!(
            "{} present but no GPU wheel index, CUDA channel or CUDA runtime package is declared; \
             installs will pick a default build that may not match the target accelerator",
            frameworks.join(", ")
        ));
    }
    for loc in &scan.unresolvable {
        report.warnings.push(format!("{loc}: dynamic import not resolved"));
    }
    report
}

pub fn validate_manifest(manifest_path: &Path, source_root: &Path) -> Result<ManifestReport> {
    let manifest = Manifest::load(manifest_path)?;
    Ok(compare(&manifest, &scan(source_root, &ImportMap::shipped())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GOLDEN_PIP: &str = "--find-links https://download.pytorch.org/whl/cu121\nnumpy\nscipy\ntorch\ntorchvision\n";
    const GOLDEN_CONDA: &str = "\
name: trunk
channels:
  - pytorch
  - nvidia
  - defaults
dependencies:
  - numpy
  - python=3.9.18=h955ad1f_0
  - pytorch=2.3.0=py3.9_cuda12.1_cudnn8.9.2_0
  - pytorch-cuda=12.1=ha16c6d3_5
  - torchvision=0.18.0=py39_cu121
  - pip:
    - scipy
";

    fn write_tree(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (rel, body) in files {
            let p = dir.path().join(rel);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, body).unwrap();
        }
        dir
    }

    fn golden_conda_deps() -> DependencySet {
        DependencySet::from_names(["numpy", "scipy"])
            .with_pin("python", Pin::build("3.9.18", "h955ad1f_0"))
            .with_pin("torch", Pin::build("2.3.0", "py3.9_cuda12.1_cudnn8.9.2_0"))
            .with_pin("pytorch-cuda", Pin::build("12.1", "ha16c6d3_5"))
            .with_pin("torchvision", Pin::build("0.18.0", "py39_cu121"))
    }

    fn channels() -> Vec<String> {
        ["pytorch", "nvidia", "defaults"].map(String::from).to_vec()
    }

    #[test]
    fn stdlib_table_is_sorted_and_pinned() {
        assert!(stdlib::STDLIB.windows(2).all(|w| w[0] < w[1]));
        for m in [
            "os",
            "sys",
            "json",
            "__future__",
            "asyncore",
            "distutils",
            "zoneinfo",
            "graphlib",
        ] {
            assert!(is_stdlib(m), "{m}");
        }
        for m in ["numpy", "torch", "tomllib"] {
            assert!(!is_stdlib(m), "{m}");
        }
    }

    #[test]
    fn parses_import_forms() {
        let src = "import os, numpy as np\nfrom scipy.linalg import eig\nfrom . import tree\nfrom .x import y\n\
                   import torch.nn.functional as F; import torchvision\n\
                   \"\"\"\nimport notreal\n\"\"\"\n# import commented\ns = 'import quoted'\n\
                   if True:\n    import yaml\nfrom PIL import (\n    Image,\n)\n\
                   m = importlib.import_module(name)\n";
        let got = parse_imports(src);
        let names: Vec<&str> = got.modules.iter().map(String::as_str).collect();
        assert_eq!(names, ["PIL", "numpy", "os", "scipy", "torch", "torchvision", "yaml"]);
        assert_eq!(got.dynamic_lines, vec![16]);
        assert!(parse_imports("import a, \\\n    b\nx = __import__('c')\n")
            .modules
            .contains("b"));
        assert_eq!(
            parse_imports("import a, \\\n    b\nx = __import__('c')\n").dynamic_lines,
            vec![3]
        );
    }

    #[test]
    fn toy_tree_yields_golden_set() {
        let dir = write_tree(&[
            (
                "main.py",
                "import os\nimport numpy as np\nimport torch\nfrom tree import Node\n",
            ),
            ("tree.py", "import scipy.io\nfrom torchvision import transforms\n"),
            ("utils/__init__.py", ""),
            ("utils/io.py", "from utils import helpers\nimport json\n"),
        ]);
        let deps = scan_imports(dir.path()).unwrap();
        assert_eq!(
            deps,
            DependencySet::from_names(["numpy", "scipy", "torch", "torchvision"])
        );
        let pip_text = emit_pip_manifest(&deps.with_find_links("https://download.pytorch.org/whl/cu121"));
        assert_eq!(pip_text, GOLDEN_PIP);
    }

    #[test]
    fn stdlib_only_is_empty_and_renders_nothing() {
        let dir = write_tree(&[("a.py", "import os\nimport sys, re\nfrom collections import deque\n")]);
        let deps = scan_imports(dir.path()).unwrap();
        assert!(deps.names.is_empty());
        assert_eq!(emit_pip_manifest(&deps), "");
    }

    #[test]
    fn mapped_and_unmapped_names() {
        let dir = write_tree(&[("a.py", "import sklearn\nimport cv2\nimport mystery_pkg\n")]);
        let r = scan(dir.path(), &ImportMap::shipped()).unwrap();
        assert_eq!(
            r.deps,
            DependencySet::from_names(["mystery_pkg", "opencv-python", "scikit-learn"])
        );
        assert_eq!(r.notes.len(), 1);
        assert!(r.notes[0].starts_with("mystery_pkg"));
        let custom = scan(dir.path(), &ImportMap::shipped().with("mystery_pkg", "mystery")).unwrap();
        assert!(custom.deps.names.contains("mystery") && custom.notes.is_empty());
    }

    #[test]
    fn unreadable_and_hidden_paths() {
        let dir = write_tree(&[
            ("a.py", "import numpy\n"),
            (".venv/lib/x.py", "import hidden_dep\n"),
            ("env/pyvenv.cfg", ""),
            ("env/lib/y.py", "import venv_dep\n"),
        ]);
        std::os::unix::fs::symlink(dir.path().join("gone.txt"), dir.path().join("broken.py")).unwrap();
        let r = scan(dir.path(), &ImportMap::shipped()).unwrap();
        assert_eq!(r.deps, DependencySet::from_names(["numpy"]));
        assert_eq!(r.warnings.len(), 1, "{:?}", r.warnings);
        assert!(r.warnings[0].starts_with("broken.py"));
        assert!(scan_imports(&dir.path().join("nope")).is_err());
    }

    #[test]
    fn pins_render_as_equals() {
        let d = DependencySet::from_names(["scipy"]).with_pin("numpy", Pin::version("1.26.0"));
        assert_eq!(emit_pip_manifest(&d), "numpy==1.26.0\nscipy\n");
        assert_eq!(parse_pip_manifest(&emit_pip_manifest(&d)).unwrap(), d);
    }

    #[test]
    fn conda_golden_is_byte_exact() {
        let pip: BTreeSet<String> = ["scipy".to_string()].into();
        let out = emit_conda_manifest(&golden_conda_deps(), "trunk", &channels(), &pip);
        assert_eq!(out, GOLDEN_CONDA);
        let parsed = parse_conda_manifest(&out).unwrap();
        assert_eq!(parsed.deps, golden_conda_deps());
        assert_eq!(parsed.emit(), out);
    }

    #[test]
    fn empty_conda_is_header_only() {
        let out = emit_conda_manifest(&DependencySet::default(), "trunk", &channels(), &BTreeSet::new());
        assert_eq!(out, "name: trunk\nchannels:\n  - pytorch\n  - nvidia\n  - defaults\n");
        assert_eq!(parse_conda_manifest(&out).unwrap().emit(), out);
    }

    #[test]
    fn gpu_hints() {
        let pip = |t: &str| Manifest::Pip(parse_pip_manifest(t).unwrap());
        assert!(pip(GOLDEN_PIP).gpu_hint_present());
        assert!(pip("--extra-index-url https://download.pytorch.org/whl/rocm5.7\ntorch\n").gpu_hint_present());
        assert!(!pip("--find-links https://download.pytorch.org/whl/cpu\ntorch\n").gpu_hint_present());
        assert!(!pip("torch\n").gpu_hint_present());
        assert!(Manifest::Conda(parse_conda_manifest(GOLDEN_CONDA).unwrap()).gpu_hint_present());
    }

    #[test]
    fn validate_flags_bloat_and_missing_hint() {
        let src = write_tree(&[(
            "main.py",
            "import numpy\nimport scipy\nimport torch\nimport torchvision\n",
        )]);
        let req = src.path().join("requirements.txt");
        std::fs::write(
            &req,
            "anaconda-client==1.12.0\nblaze\nclyent==1.2.2\nnumpy\nscipy\ntorch\ntorchvision\n",
        )
        .unwrap();
        let r = validate_manifest(&req, src.path()).unwrap();
        assert!(r.missing.is_empty());
        assert_eq!(r.extra, ["anaconda-client", "blaze", "clyent"].map(String::from).into());
        assert!(!r.gpu_hint_present);
        assert!(r.warnings.iter().any(|w| w.contains("torch")));

        std::fs::write(&req, GOLDEN_PIP).unwrap();
        let r = validate_manifest(&req, src.path()).unwrap();
        assert!(r.is_clean() && r.gpu_hint_present && r.warnings.is_empty());

        std::fs::write(&req, "numpy\n").unwrap();
        let r = validate_manifest(&req, src.path()).unwrap();
        assert_eq!(r.missing.len(), 3);

        std::fs::write(&req, "numpy\n-r other.txt\n").unwrap();
        assert!(matches!(validate_manifest(&req, src.path()), Err(Error::Manifest(_))));
    }

    #[test]
    fn conda_validation_uses_aliases_and_ignores_runtime() {
        let src = write_tree(&[("main.py", "import numpy, scipy, torch, torchvision\n")]);
        let env = src.path().join("environment.yml");
        std::fs::write(&env, GOLDEN_CONDA).unwrap();
        let r = validate_manifest(&env, src.path()).unwrap();
        assert!(r.is_clean(), "{r:?}");
        assert!(r.gpu_hint_present);
    }

    #[test]
    fn normalization_matches_pep503() {
        assert_eq!(normalize("PyYAML"), "pyyaml");
        assert_eq!(normalize("Foo.Bar__baz-qux"), "foo-bar-baz-qux");
    }

    const POOL: &[&str] = &[
        "os",
        "sys",
        "json",
        "numpy",
        "scipy",
        "torch",
        "torchvision",
        "sklearn",
        "cv2",
        "PIL",
        "yaml",
        "pandas",
        "tree",
        "helpers",
        "mystery_pkg",
        "collections",
    ];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn emitted_manifests_validate_clean(
            picks in proptest::collection::vec(proptest::collection::vec(0..POOL.len(), 0..6), 1..4),
            link in proptest::option::of(Just("https://download.pytorch.org/whl/cu121".to_string())),
            pip_mask in proptest::collection::vec(any::<bool>(), POOL.len()),
        ) {
            let mut files = vec![("tree.py".to_string(), "import os\n".to_string()),
                                 ("helpers.py".to_string(), String::new())];
            for (i, p) in picks.iter().enumerate() {
                let body: String = p.iter().map(|&k| format!("import {}\n", POOL[k])).collect();
                files.push((format!("m{i}.py"), body));
            }
            let borrowed: Vec<(&str, &str)> = files.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let dir = write_tree(&borrowed);
            let mut deps = scan_imports(dir.path()).unwrap();
            deps.find_links = link;
            for n in &deps.names {
                prop_assert!(!is_stdlib(n) && n != "tree" && n != "helpers");
            }

            let pip = emit_pip_manifest(&deps);
            let reparsed = parse_pip_manifest(&pip).unwrap();
            prop_assert_eq!(&emit_pip_manifest(&reparsed), &pip);
            for line in pip.lines().filter(|l| !l.starts_with("--")) {
                prop_assert!(deps.names.contains(line));
            }
            let req = dir.path().join("requirements.txt");
            std::fs::write(&req, &pip).unwrap();
            let r = validate_manifest(&req, dir.path()).unwrap();
            prop_assert!(r.is_clean(), "{:?}", r);
            prop_assert!(r.missing.is_disjoint(&r.extra));

            let pip_section: BTreeSet<String> = deps.names.iter().enumerate()
                .filter(|(i, _)| pip_mask[*i % pip_mask.len()]).map(|(_, n)| n.clone()).collect();
            let conda = emit_conda_manifest(&deps, "env", &channels(), &pip_section);
            prop_assert_eq!(parse_conda_manifest(&conda).unwrap().emit(), conda.clone());
            let env = dir.path().join("environment.yml");
            std::fs::write(&env, &conda).unwrap();
            prop_assert!(validate_manifest(&env, dir.path()).unwrap().is_clean());
        }
    }
}
