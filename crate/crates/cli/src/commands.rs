//! The four verbs: `synth`, `extract`, `evaluate`, `ablate`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use halt_core::corpus::{self, FeatureMatrix, LabeledExample, Task};
use halt_core::features::{extract_features, FeatureMask};
use halt_core::nli_backend::{LookupBackend, NliBackend, SyntheticBackend};
use halt_core::oof::{run_oof, OofConfig, OofResult};
use halt_core::policy::{evaluate, optimize_threshold, EvalReport};

use crate::artifacts;
use crate::config::{BackendSpec, RunConfig};

pub const SYNTH_EXAMPLES_FILE: &str = "synthetic.jsonl";
pub const SYNTH_SCORES_A_FILE: &str = "scores_a.tsv";
pub const SYNTH_SCORES_B_FILE: &str = "scores_b.tsv";

/// Ablation variants, in report order. `single_backend` keeps backend B.
pub const ABLATION_VARIANTS: &[&str] = &[
    "full",
    "no_contradiction",
    "no_entailment",
    "no_lexical",
    "single_backend",
];

pub fn variant_mask(name: &str) -> Result<FeatureMask> {
    let spec = match name {
        "full" => "none",
        "no_contradiction" => "drop_contradiction",
        "no_entailment" => "drop_entailment",
        "no_lexical" => "drop_lexical",
        "single_backend" => "single_b",
        other => bail!(
            "unknown ablation variant '{other}' (expected one of {})",
            ABLATION_VARIANTS.join(", ")
        ),
    };
    Ok(spec.parse()?)
}

#[derive(Debug, Clone)]
pub struct SynthOutputs {
    pub examples: PathBuf,
    pub scores_a: PathBuf,
    pub scores_b: PathBuf,
}

/// Write a planted corpus and its two score files into the `--out` directory.
pub fn synth(cfg: &RunConfig) -> Result<SynthOutputs> {
    let dir = cfg.output()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let corpus = corpus::generate_synthetic(cfg.n, cfg.synthetic_seed())?;
    let out = SynthOutputs {
        examples: dir.join(SYNTH_EXAMPLES_FILE),
        scores_a: dir.join(SYNTH_SCORES_A_FILE),
        scores_b: dir.join(SYNTH_SCORES_B_FILE),
    };
    corpus::write_examples(&out.examples, &corpus.examples)?;
    corpus.scores_a.save(&out.scores_a)?;
    corpus.scores_b.save(&out.scores_b)?;
    Ok(out)
}

fn load_examples(cfg: &RunConfig) -> Result<Vec<LabeledExample>> {
    let input = cfg.input()?;
    let examples = match cfg.task {
        Task::Synthetic => corpus::read_examples(input)?,
        task => corpus::load_halueval(input, task)?,
    };
    Ok(examples)
}

fn backend(spec: &BackendSpec, cfg: &RunConfig, slot: &str) -> Result<Box<dyn NliBackend>> {
    Ok(match spec {
        BackendSpec::Synthetic => Box::new(SyntheticBackend::new(
            format!("synthetic-{slot}"),
            cfg.backend_seed(slot),
        )),
        BackendSpec::File(path) => Box::new(
            LookupBackend::load(path)
                .with_context(|| format!("loading score file {}", path.display()))?,
        ),
    })
}

/// Read a dataset, score it with both backends and write the feature matrix
/// to `--out`.
pub fn extract(cfg: &RunConfig) -> Result<FeatureMatrix> {
    let examples = load_examples(cfg)?;
    let a = backend(&cfg.scores_a, cfg, "a")?;
    let b = backend(&cfg.scores_b, cfg, "b")?;
    let features = extract_features(&examples, a.as_ref(), b.as_ref(), &cfg.mask)?;
    let out = cfg.output()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    features.save(out)?;
    Ok(features)
}

/// Result of one OOF run plus the policy chosen on its probabilities.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub features: FeatureMatrix,
    pub oof: OofResult,
    pub report: EvalReport,
}

fn oof_config(cfg: &RunConfig) -> OofConfig {
    OofConfig {
        classifier: cfg.classifier,
        calibration: cfg.calibration,
        k: cfg.k,
        split_seed: cfg.split_seed(),
        model_seed: cfg.optimizer_seed(),
        c: cfg.c,
        stratified: cfg.stratified,
    }
}

/// OOF training, calibration and thresholding on an in-memory matrix.
pub fn evaluate_matrix(cfg: &RunConfig, features: FeatureMatrix) -> Result<Evaluation> {
    let features = if cfg.mask.is_empty() {
        features
    } else {
        features.apply_mask(&cfg.mask)?
    };
    let oof = run_oof(&features, &oof_config(cfg))?;
    let mut policy = optimize_threshold(&oof.calibrated, &features.labels, cfg.precision_floor)?;
    policy.coverage_target = Some(cfg.coverage);
    let report = evaluate(&oof.calibrated, &features.labels, &policy)?;
    Ok(Evaluation {
        features,
        oof,
        report,
    })
}

/// `evaluate`: features from `--in`, artifacts into the `--out` directory.
pub fn evaluate_file(cfg: &RunConfig) -> Result<Evaluation> {
    let input = cfg.input()?;
    let features = FeatureMatrix::load(input)
        .with_context(|| format!("loading features from {}", input.display()))?;
    let eval = evaluate_matrix(cfg, features)?;
    artifacts::write_all(cfg.output()?, cfg, &eval)?;
    Ok(eval)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub mask: FeatureMask,
    pub dim: usize,
    pub report: EvalReport,
}

/// Run each variant's mask on the full feature matrix from `--in`. The
/// `mask` setting of `cfg` is replaced per variant.
pub fn ablate(cfg: &RunConfig, variants: &[String]) -> Result<Vec<AblationRow>> {
    let masks = variants
        .iter()
        .map(|v| variant_mask(v))
        .collect::<Result<Vec<_>>>()?;
    let input = cfg.input()?;
    let full = FeatureMatrix::load(input)
        .with_context(|| format!("loading features from {}", input.display()))?;
    let out = cfg.output()?;

    let mut rows = Vec::with_capacity(variants.len());
    for (variant, mask) in variants.iter().zip(masks) {
        let mut vcfg = cfg.clone();
        vcfg.mask = mask;
        let eval = evaluate_matrix(&vcfg, full.clone())
            .with_context(|| format!("ablation variant '{variant}'"))?;
        artifacts::write_all(&out.join(variant), &vcfg, &eval)?;
        rows.push(AblationRow {
            variant: variant.clone(),
            mask,
            dim: eval.features.dim(),
            report: eval.report,
        });
    }
    artifacts::write_ablation_table(&ablation_table_path(out, cfg.task), &rows)?;
    Ok(rows)
}

pub fn ablation_table_path(dir: &Path, task: Task) -> PathBuf {
    dir.join(format!("{task}_ablation.tsv"))
}
