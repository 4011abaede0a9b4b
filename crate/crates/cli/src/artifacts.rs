//! Files written by `evaluate` and `ablate`.
//!
//! Per run directory:
//! - `<task>_oof_calibrated_pred.jsonl`: one record per example with
//!   `id`, `raw_score`, `calibrated_prob`, `label`.
//! - `<task>_oof_meta.json`: headline metrics, threshold, config echo.
//! - `<task>_model.txt`, `<task>_calibrator.txt`: the refitted model and the
//!   calibrator, in their text formats.
//! - `plots/`: TSV series for the PR, ROC, reliability and risk-coverage plots.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use halt_core::corpus::Task;
use halt_core::policy::EvalReport;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::{AblationRow, Evaluation};
use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofRecord {
    pub id: String,
    pub raw_score: f64,
    pub calibrated_prob: f64,
    pub label: u8,
}

pub fn predictions_path(dir: &Path, task: Task) -> PathBuf {
    dir.join(format!("{task}_oof_calibrated_pred.jsonl"))
}

pub fn meta_path(dir: &Path, task: Task) -> PathBuf {
    dir.join(format!("{task}_oof_meta.json"))
}

pub fn model_path(dir: &Path, task: Task) -> PathBuf {
    dir.join(format!("{task}_model.txt"))
}

pub fn calibrator_path(dir: &Path, task: Task) -> PathBuf {
    dir.join(format!("{task}_calibrator.txt"))
}

pub fn write_all(dir: &Path, cfg: &RunConfig, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir.join("plots")).with_context(|| format!("creating {}", dir.display()))?;
    write_predictions(&predictions_path(dir, cfg.task), eval)?;
    write_text(&meta_path(dir, cfg.task), &meta_json(cfg, eval)?)?;
    write_text(&model_path(dir, cfg.task), &eval.oof.final_model.to_text())?;
    write_text(
        &calibrator_path(dir, cfg.task),
        &eval.oof.calibrator.to_text(),
    )?;
    write_plots(&dir.join("plots"), &eval.report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_predictions(path: &Path, eval: &Evaluation) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let f = &eval.features;
    for i in 0..f.len() {
        let record = OofRecord {
            id: f.ids[i].clone(),
            raw_score: eval.oof.raw_scores[i],
            calibrated_prob: eval.oof.calibrated[i],
            label: u8::from(f.labels[i]),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<OofRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

fn meta_json(cfg: &RunConfig, eval: &Evaluation) -> Result<String> {
    let r = &eval.report;
    let tag = cfg.floor_tag();
    let mut meta = serde_json::Map::new();
    meta.insert(format!("precision_at_prec_ge_{tag}"), json!(r.precision));
    meta.insert(format!("recall_at_prec_ge_{tag}"), json!(r.recall));
    meta.insert(format!("f1_at_prec_ge_{tag}"), json!(r.f1));
    meta.insert(format!("accuracy_at_prec_ge_{tag}"), json!(r.accuracy));
    meta.insert("threshold".into(), json!(r.policy.threshold));
    meta.insert("precision_floor".into(), json!(r.policy.precision_floor));
    meta.insert("roc_auc".into(), json!(r.roc_auc));
    meta.insert("ece".into(), json!(r.ece));
    meta.insert("n".into(), json!(r.n));
    meta.insert(
        "n_positive".into(),
        json!(eval.features.labels.iter().filter(|&&y| y).count()),
    );
    meta.insert("confusion".into(), serde_json::to_value(r.confusion)?);
    meta.insert("selective".into(), serde_json::to_value(&r.selective)?);
    meta.insert("feature_columns".into(), json!(eval.features.columns));
    meta.insert("fold_sizes".into(), json!(eval.oof.assignment.sizes()));
    meta.insert(
        "final_model".into(),
        json!({
            "grad_norm": eval.oof.final_model.grad_norm,
            "iterations": eval.oof.final_model.iterations,
        }),
    );
    meta.insert("seed".into(), json!(cfg.seed));
    meta.insert("config".into(), serde_json::to_value(cfg)?);
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    Ok(text)
}

fn tsv(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

fn write_plots(dir: &Path, r: &EvalReport) -> Result<()> {
    write_text(
        &dir.join("pr_curve.tsv"),
        &tsv(
            "threshold\tprecision\trecall",
            r.pr_curve
                .iter()
                .map(|p| format!("{}\t{}\t{}", p.threshold, p.precision, p.recall)),
        ),
    )?;
    write_text(
        &dir.join("roc_curve.tsv"),
        &tsv(
            "threshold\tfpr\ttpr",
            r.roc_curve
                .iter()
                .map(|p| format!("{}\t{}\t{}", p.threshold, p.fpr, p.tpr)),
        ),
    )?;
    write_text(
        &dir.join("calibration.tsv"),
        &tsv(
            "lower\tupper\tcount\tmean_confidence\taccuracy",
            r.reliability.iter().map(|b| {
                format!(
                    "{}\t{}\t{}\t{}\t{}",
                    b.lower, b.upper, b.count, b.mean_confidence, b.accuracy
                )
            }),
        ),
    )?;
    write_text(
        &dir.join("risk_coverage.tsv"),
        &tsv(
            "coverage_target\trealized_coverage\tretained\tprecision\trecall\tf1\trisk",
            r.risk_coverage.iter().map(|p| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    p.coverage_target,
                    p.realized_coverage,
                    p.retained,
                    p.precision,
                    p.recall,
                    p.f1,
                    p.risk
                )
            }),
        ),
    )?;
    // The chosen operating point, for marking on the PR and ROC plots.
    let c = r.confusion;
    let mut op = String::from("threshold\tprecision\trecall\tfpr\ttpr\n");
    writeln!(
        op,
        "{}\t{}\t{}\t{}\t{}",
        r.policy.threshold,
        r.precision,
        r.recall,
        c.false_positive_rate(),
        r.recall
    )?;
    write_text(&dir.join("operating_point.tsv"), &op)
}

pub fn write_ablation_table(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let text = tsv(
        "variant\tmask\tdim\tprecision\trecall\tf1\taccuracy\tthreshold\troc_auc\tece\tselective_precision",
        rows.iter().map(|row| {
            let r = &row.report;
            let sel = r.selective.as_ref().map_or(f64::NAN, |s| s.precision);
            format!(
                "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.6}\t{:.4}\t{:.4}\t{:.4}",
                row.variant,
                row.mask,
                row.dim,
                r.precision,
                r.recall,
                r.f1,
                r.accuracy,
                r.policy.threshold,
                r.roc_auc,
                r.ece,
                sel
            )
        }),
    );
    write_text(path, &text)
}
