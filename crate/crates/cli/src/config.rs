//! Run configuration: per-task defaults, an optional `key=value` config file,
//! then command-line flags, later sources overriding earlier ones.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use halt_core::calibration::CalibrationMethod;
use halt_core::corpus::Task;
use halt_core::features::FeatureMask;
use halt_core::models::{ClassifierKind, DEFAULT_C};
use halt_core::oof::DEFAULT_FOLDS;
use halt_core::policy::{DEFAULT_COVERAGE, DEFAULT_PRECISION_FLOOR};
use halt_core::seed;
use serde::Serialize;

pub const KNOWN_KEYS: &[&str] = &[
    "task",
    "classifier",
    "calibration",
    "k",
    "seed",
    "precision_floor",
    "coverage",
    "mask",
    "scores_a",
    "scores_b",
    "in",
    "out",
    "stratified",
    "n",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Synthetic,
    File(PathBuf),
}

impl BackendSpec {
    fn parse(s: &str) -> Self {
        if s == "synthetic" {
            BackendSpec::Synthetic
        } else {
            BackendSpec::File(PathBuf::from(s))
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Synthetic => f.write_str("synthetic"),
            BackendSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub task: Task,
    pub classifier: ClassifierKind,
    pub calibration: CalibrationMethod,
    pub k: usize,
    pub seed: u64,
    pub precision_floor: f64,
    pub coverage: f64,
    #[serde(serialize_with = "serialize_display")]
    pub mask: FeatureMask,
    pub scores_a: BackendSpec,
    pub scores_b: BackendSpec,
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Left out of the echoed config so reruns into another directory
    /// produce identical metadata.
    #[serde(skip)]
    pub output: Option<PathBuf>,
    pub stratified: bool,
    pub c: f64,
    /// Corpus size for `synth`.
    pub n: usize,
}

fn serialize_display<T: fmt::Display, S: serde::Serializer>(
    v: &T,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Classifier and calibration per task: summarization and dialogue use
/// logistic regression with isotonic calibration, QA a linear SVC with Platt
/// scaling.
pub fn task_defaults(task: Task) -> (ClassifierKind, CalibrationMethod) {
    match task {
        Task::Qa => (ClassifierKind::LinearSvc, CalibrationMethod::Platt),
        Task::Summarization | Task::Dialogue | Task::Synthetic => {
            (ClassifierKind::LogReg, CalibrationMethod::Isotonic)
        }
    }
}

fn normalize_key(k: &str) -> String {
    k.trim().trim_start_matches("--").replace('-', "_")
}

/// Parse `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value, got {line:?}", i + 1))?;
        let key = normalize_key(k);
        if !KNOWN_KEYS.contains(&key.as_str()) {
            bail!("config line {}: unknown key '{key}'", i + 1);
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    parse_config_text(&text)
}

impl RunConfig {
    /// Merge `file` then `flags` (flags win) over the defaults.
    pub fn resolve(
        file: &BTreeMap<String, String>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut kv = file.clone();
        for (k, v) in flags {
            let key = normalize_key(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("unknown option '{key}'");
            }
            kv.insert(key, v.clone());
        }
        let get = |k: &str| kv.get(k).map(String::as_str);

        let task: Task = get("task").unwrap_or("synthetic").parse()?;
        let (default_classifier, default_calibration) = task_defaults(task);
        let classifier = match get("classifier") {
            Some(s) => s.parse()?,
            None => default_classifier,
        };
        let calibration = match get("calibration") {
            Some(s) => s.parse()?,
            None => default_calibration,
        };
        let parse_num = |k: &str| -> Result<Option<f64>> {
            get(k)
                .map(|s| {
                    s.parse::<f64>()
                        .with_context(|| format!("'{k}' must be a number, got {s:?}"))
                })
                .transpose()
        };
        let parse_int = |k: &str| -> Result<Option<u64>> {
            get(k)
                .map(|s| {
                    s.parse::<u64>()
                        .with_context(|| format!("'{k}' must be an integer, got {s:?}"))
                })
                .transpose()
        };

        let precision_floor = parse_num("precision_floor")?.unwrap_or(DEFAULT_PRECISION_FLOOR);
        if !(precision_floor > 0.0 && precision_floor <= 1.0) {
            bail!("precision floor {precision_floor} outside (0, 1]");
        }
        let coverage = parse_num("coverage")?.unwrap_or(DEFAULT_COVERAGE);
        if !(coverage > 0.0 && coverage <= 1.0) {
            bail!("coverage {coverage} outside (0, 1]");
        }
        let k = parse_int("k")?.map_or(DEFAULT_FOLDS, |v| v as usize);
        if k < 2 {
            bail!("k must be at least 2");
        }
        let stratified = match get("stratified") {
            None | Some("false") | Some("0") => false,
            Some("true") | Some("1") => true,
            Some(other) => bail!("'stratified' must be true or false, got {other:?}"),
        };

        Ok(RunConfig {
            task,
            classifier,
            calibration,
            k,
            seed: parse_int("seed")?.unwrap_or(0),
            precision_floor,
            coverage,
            mask: get("mask").unwrap_or("none").parse()?,
            scores_a: BackendSpec::parse(get("scores_a").unwrap_or("synthetic")),
            scores_b: BackendSpec::parse(get("scores_b").unwrap_or("synthetic")),
            input: get("in").map(PathBuf::from),
            output: get("out").map(PathBuf::from),
            stratified,
            c: DEFAULT_C,
            n: parse_int("n")?.map_or(2000, |v| v as usize),
        })
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| anyhow!("--in is required"))
    }

    pub fn output(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| anyhow!("--out is required"))
    }

    pub fn split_seed(&self) -> u64 {
        seed::derive(self.seed, "split")
    }

    pub fn synthetic_seed(&self) -> u64 {
        seed::derive(self.seed, "synthetic")
    }

    pub fn optimizer_seed(&self) -> u64 {
        seed::derive(self.seed, "optimizer")
    }

    pub fn backend_seed(&self, slot: &str) -> u64 {
        seed::derive(self.seed, &format!("backend_{slot}"))
    }

    /// `0.70` -> `"0.70"`, used inside metric key names.
    pub fn floor_tag(&self) -> String {
        format!("{:.2}", self.precision_floor)
    }
}
