//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test -p halt-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use halt_cli::commands;
use halt_cli::config::RunConfig;
use halt_core::calibration::{ece, isotonic_regression, CalibrationMethod, Calibrator, ECE_BINS};
use halt_core::corpus::{generate_synthetic, FeatureMatrix};
use halt_core::features::{extract_features, jaccard, rouge_l, FeatureMask};
use halt_core::models::{self, ClassifierKind, Objective, GRAD_TOLERANCE};
use halt_core::nli_backend::LookupBackend;
use halt_core::oof::{run_oof, OofConfig};
use halt_core::policy::{optimize_threshold, Confusion};
use halt_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, Box<dyn FnOnce() -> Outcome>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn planted_features() -> FeatureMatrix {
    let corpus = generate_synthetic(2000, 7).expect("synthetic corpus");
    let a = LookupBackend::new(corpus.scores_a);
    let b = LookupBackend::new(corpus.scores_b);
    extract_features(&corpus.examples, &a, &b, &FeatureMask::none()).expect("features")
}

// ---------------------------------------------------------------------------
// Isotonic regression

/// Least squares over every partition of the (tie-pooled) sequence into
/// contiguous blocks whose means are non-decreasing.
fn isotonic_by_partitions(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut ok = true;
        for end in 1..=n {
            if end == n || cuts & (1 << (end - 1)) != 0 {
                let w: f64 = weights[start..end].iter().sum();
                let m = (start..end).map(|i| values[i] * weights[i]).sum::<f64>() / w;
                if m < prev - 1e-12 {
                    ok = false;
                    break;
                }
                prev = m;
                fit.extend(std::iter::repeat_n(m, end - start));
                start = end;
            }
        }
        if !ok {
            continue;
        }
        let sse: f64 = (0..n)
            .map(|i| weights[i] * (values[i] - fit[i]).powi(2))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b - 1e-12) {
            best = Some((sse, fit));
        }
    }
    best.expect("the single-block partition is always feasible")
        .1
}

/// `fit_i = max_{j <= i} min_{k >= i} mean(y_j..=y_k)`.
fn isotonic_by_minmax(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mean = |j: usize, k: usize| {
        let w: f64 = weights[j..=k].iter().sum();
        (j..=k).map(|i| values[i] * weights[i]).sum::<f64>() / w
    };
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|j| (i..n).map(|k| mean(j, k)).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Group equal scores (ascending); returns group means, counts, and each
/// input's group index.
fn pool_ties(scores: &[f64], targets: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let (mut means, mut counts, mut group) = (Vec::new(), Vec::new(), vec![0; scores.len()]);
    let mut last = None;
    for &i in &order {
        if last != Some(scores[i]) {
            means.push(0.0);
            counts.push(0.0);
            last = Some(scores[i]);
        }
        let g = means.len() - 1;
        means[g] += targets[i];
        counts[g] += 1.0;
        group[i] = g;
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        *m /= c;
    }
    (means, counts, group)
}

fn compare_isotonic(
    scores: &[f64],
    targets: &[f64],
    oracle: fn(&[f64], &[f64]) -> Vec<f64>,
) -> Result<(), String> {
    let (_, fitted) = isotonic_regression(scores, targets).map_err(|e| e.to_string())?;
    let (means, counts, group) = pool_ties(scores, targets);
    let expected = oracle(&means, &counts);
    for i in 0..scores.len() {
        ensure((fitted[i] - expected[group[i]]).abs() <= 1e-6, || {
            format!("scores {scores:?} targets {targets:?}: got {fitted:?}")
        })?;
    }
    Ok(())
}

fn isotonic_oracle() -> Outcome {
    let mut exhaustive = 0;
    for n in 1..=6usize {
        for bits in 0u32..(1 << n) {
            let targets: Vec<f64> = (0..n).map(|i| f64::from((bits >> i) & 1)).collect();
            let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
            compare_isotonic(&scores, &targets, isotonic_by_partitions)?;
            // Same instance presented in reverse input order.
            let rs: Vec<f64> = scores.iter().rev().copied().collect();
            let rt: Vec<f64> = targets.iter().rev().copied().collect();
            compare_isotonic(&rs, &rt, isotonic_by_partitions)?;
            exhaustive += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..500 {
        let n = rng.random_range(1..=50);
        // A coarse score grid produces ties.
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..20u8)) / 4.0)
            .collect();
        let targets: Vec<f64> = if rng.random_bool(0.5) {
            (0..n)
                .map(|_| f64::from(u8::from(rng.random_bool(0.4))))
                .collect()
        } else {
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
        };
        compare_isotonic(&scores, &targets, isotonic_by_minmax)?;
    }
    Ok(format!(
        "{exhaustive} exhaustive binary instances, 500 random, tol 1e-6"
    ))
}

// ---------------------------------------------------------------------------
// Threshold optimizer

fn count_at(probs: &[f64], labels: &[bool], t: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= t, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Scan every candidate with integer feasibility `tp / (tp + fp) >= 7/10`.
fn threshold_by_scan(probs: &[f64], labels: &[bool]) -> Option<f64> {
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));

    let mut best: Option<(f64, f64)> = None;
    for t in candidates {
        let c = count_at(probs, labels, t);
        if c.tp + c.fp == 0 || 10 * c.tp < 7 * (c.tp + c.fp) {
            continue;
        }
        let f1 = 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64;
        best = match best {
            Some((bf, bt)) if f1 < bf || (f1 == bf && t < bt) => Some((bf, bt)),
            _ => Some((f1, t)),
        };
    }
    best.map(|(_, t)| t)
}

fn threshold_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut feasible, mut infeasible) = (0, 0);
    let mut trials = 0;
    while trials < 1000 {
        let n = rng.random_range(2..=50);
        let grid = rng.random_range(3..=40u32);
        let skill = rng.random_range(0.0..3.0);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
            labels[0] = !labels[0];
        }
        let probs: Vec<f64> = labels
            .iter()
            .map(|&y| {
                let z = if y { skill } else { -skill } + rng.random_range(-2.0..2.0);
                (1.0 / (1.0 + f64::exp(-z)) * f64::from(grid)).round() / f64::from(grid)
            })
            .collect();
        trials += 1;

        let expected = threshold_by_scan(&probs, &labels);
        match (optimize_threshold(&probs, &labels, 0.70), expected) {
            (Ok(policy), Some(t)) => {
                ensure(policy.threshold.to_bits() == t.to_bits(), || {
                    format!(
                        "probs {probs:?} labels {labels:?}: got {} expected {t}",
                        policy.threshold
                    )
                })?;
                let c = count_at(&probs, &labels, policy.threshold);
                ensure(10 * c.tp >= 7 * (c.tp + c.fp) && c.tp + c.fp > 0, || {
                    format!("precision below 0.70 at {}: {c:?}", policy.threshold)
                })?;
                feasible += 1;
            }
            (Err(Error::InfeasiblePrecision { .. }), None) => infeasible += 1,
            (got, want) => {
                return Err(format!(
                    "probs {probs:?} labels {labels:?}: {got:?} vs {want:?}"
                ))
            }
        }
    }
    Ok(format!(
        "{trials} instances ({feasible} feasible, {infeasible} infeasible), exact match"
    ))
}

// ---------------------------------------------------------------------------
// Gradients

fn gradient_check(features: &FeatureMatrix) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for instance in 0..10 {
        let (n, d) = (rng.random_range(20..60), rng.random_range(1..6));
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let theta: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = rng.random_range(0.1..3.0);
        for kind in [ClassifierKind::LogReg, ClassifierKind::LinearSvc] {
            let obj = Objective::new(kind, &rows, &labels, c).map_err(|e| e.to_string())?;
            let g = obj.gradient(&theta);
            let h = 1e-5;
            let fd: Vec<f64> = (0..=d)
                .map(|j| {
                    let (mut up, mut down) = (theta.clone(), theta.clone());
                    up[j] += h;
                    down[j] -= h;
                    (obj.value(&up) - obj.value(&down)) / (2.0 * h)
                })
                .collect();
            let diff = g
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
            worst = worst.max(diff / scale);
            ensure(diff / scale <= 1e-5, || {
                format!(
                    "{kind} instance {instance}: relative error {:.3e}",
                    diff / scale
                )
            })?;
        }
    }
    let mut norms = Vec::new();
    for kind in [ClassifierKind::LogReg, ClassifierKind::LinearSvc] {
        let (model, trace) = models::fit_with_trace(kind, &features.rows, &features.labels, 1.0, 0)
            .map_err(|e| e.to_string())?;
        ensure(model.grad_norm <= GRAD_TOLERANCE && trace.converged, || {
            format!("{kind} stopped at gradient norm {:.3e}", model.grad_norm)
        })?;
        norms.push(format!("{kind} {:.1e}", model.grad_norm));
    }
    Ok(format!(
        "worst relative FD error {worst:.1e}; planted-data gradient norms {}",
        norms.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// OOF purity

fn oof_purity(features: &FeatureMatrix) -> Outcome {
    let cfg = OofConfig::new(ClassifierKind::LogReg, CalibrationMethod::Isotonic);
    let base = run_oof(features, &cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut others_moved = 0;
    let picks: Vec<usize> = (0..5)
        .map(|_| rng.random_range(0..features.len()))
        .collect();
    for &i in &picks {
        let mut flipped = features.clone();
        flipped.labels[i] = !flipped.labels[i];
        let r = run_oof(&flipped, &cfg).map_err(|e| e.to_string())?;
        ensure(
            r.raw_scores[i].to_bits() == base.raw_scores[i].to_bits(),
            || format!("example {i}: {} -> {}", base.raw_scores[i], r.raw_scores[i]),
        )?;
        // Examples whose models did train on the flipped label do move.
        let fold = base.assignment.fold_of[i];
        others_moved += (0..features.len())
            .filter(|&j| {
                base.assignment.fold_of[j] != fold && r.raw_scores[j] != base.raw_scores[j]
            })
            .count();
    }
    ensure(others_moved > 0, || {
        "flipping labels changed no other fold's scores".into()
    })?;
    Ok(format!(
        "{} flips, own scores bit-identical, {others_moved} scores in other folds moved",
        picks.len()
    ))
}

// ---------------------------------------------------------------------------
// Calibration

fn calibration_quality(features: &FeatureMatrix) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut parts = Vec::new();
    for (kind, method) in [
        (ClassifierKind::LogReg, CalibrationMethod::Isotonic),
        (ClassifierKind::LinearSvc, CalibrationMethod::Platt),
        (ClassifierKind::LogReg, CalibrationMethod::Platt),
        (ClassifierKind::LinearSvc, CalibrationMethod::Isotonic),
    ] {
        let r = run_oof(features, &OofConfig::new(kind, method)).map_err(|e| e.to_string())?;
        let e = ece(&r.calibrated, &features.labels, ECE_BINS).map_err(|e| e.to_string())?;
        ensure(e <= 0.05, || format!("{kind}+{method}: ECE {e:.4}"))?;
        let (lo, hi) = r
            .raw_scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                (lo.min(s), hi.max(s))
            });
        let cal: &Calibrator = &r.calibrator;
        for _ in 0..10_000 {
            let a = rng.random_range(lo - 2.0..hi + 2.0);
            let b = rng.random_range(lo - 2.0..hi + 2.0);
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            ensure(cal.apply(x) <= cal.apply(y), || {
                format!("{method} not monotone at {x}, {y}")
            })?;
        }
        parts.push(format!("{kind}+{method} ECE {e:.4}"));
    }
    Ok(format!(
        "{}; monotone on 10000 pairs each",
        parts.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// End to end

fn run_config(pairs: &[(&str, &str)]) -> RunConfig {
    let flags: BTreeMap<String, String> = pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    RunConfig::resolve(&BTreeMap::new(), &flags).expect("valid config")
}

fn end_to_end(features: &FeatureMatrix) -> Outcome {
    let full = commands::evaluate_matrix(&run_config(&[("task", "synthetic")]), features.clone())
        .map_err(|e| e.to_string())?;
    let single = commands::evaluate_matrix(
        &run_config(&[("task", "synthetic"), ("mask", "single_b")]),
        features.clone(),
    )
    .map_err(|e| e.to_string())?;
    let r = &full.report;
    let sel = r.selective.as_ref().ok_or("no selective report")?;
    ensure(r.roc_auc >= 0.9, || format!("ROC-AUC {:.4}", r.roc_auc))?;
    ensure(sel.precision >= r.precision, || {
        format!(
            "selective precision {:.4} < full {:.4}",
            sel.precision, r.precision
        )
    })?;
    ensure(r.f1 >= single.report.f1, || {
        format!(
            "full F1 {:.4} < single-backend F1 {:.4}",
            r.f1, single.report.f1
        )
    })?;
    Ok(format!(
        "ROC-AUC {:.4}; precision {:.4} -> {:.4} at coverage {:.2}; F1 full {:.4} vs single-backend {:.4}",
        r.roc_auc, r.precision, sel.precision, sel.realized_coverage, r.f1, single.report.f1
    ))
}

// ---------------------------------------------------------------------------
// Artifacts

fn halt_rag(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_halt-rag"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "halt-rag {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}

fn close(name: &str, got: f64, want: f64) -> Result<(), String> {
    ensure((got - want).abs() <= 1e-12, || {
        format!("{name}: meta {got} vs recomputed {want}")
    })
}

fn num(meta: &Value, key: &str) -> Result<f64, String> {
    meta.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("meta lacks numeric '{key}'"))
}

/// Recompute every metric in the meta file from the prediction records.
fn reread_and_recompute(run: &Path) -> Result<usize, String> {
    let jsonl = std::fs::read_to_string(run.join("synthetic_oof_calibrated_pred.jsonl"))
        .map_err(|e| e.to_string())?;
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let want_fields: BTreeSet<&str> = ["id", "raw_score", "calibrated_prob", "label"].into();
    for line in jsonl.lines() {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("record is not an object")?;
        let fields: BTreeSet<&str> = obj.keys().map(String::as_str).collect();
        ensure(fields == want_fields, || {
            format!("record fields {fields:?}")
        })?;
        probs.push(v["calibrated_prob"].as_f64().ok_or("calibrated_prob")?);
        labels.push(match v["label"].as_u64() {
            Some(1) => true,
            Some(0) => false,
            _ => return Err(format!("bad label in {line}")),
        });
    }
    let meta: Value = serde_json::from_str(
        &std::fs::read_to_string(run.join("synthetic_oof_meta.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    for key in [
        "precision_at_prec_ge_0.70",
        "recall_at_prec_ge_0.70",
        "f1_at_prec_ge_0.70",
        "accuracy_at_prec_ge_0.70",
        "threshold",
        "roc_auc",
        "ece",
        "config",
        "seed",
    ] {
        ensure(meta.get(key).is_some(), || format!("meta lacks '{key}'"))?;
    }

    let n = probs.len();
    let t = num(&meta, "threshold")?;
    let c = count_at(&probs, &labels, t);
    let (tp, fp, tn, fnn) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
    close(
        "precision",
        num(&meta, "precision_at_prec_ge_0.70")?,
        precision,
    )?;
    close("recall", num(&meta, "recall_at_prec_ge_0.70")?, recall)?;
    close(
        "f1",
        num(&meta, "f1_at_prec_ge_0.70")?,
        2.0 * tp / (2.0 * tp + fp + fnn),
    )?;
    close(
        "accuracy",
        num(&meta, "accuracy_at_prec_ge_0.70")?,
        (tp + tn) / n as f64,
    )?;
    close("n", num(&meta, "n")?, n as f64)?;
    close(
        "n_positive",
        num(&meta, "n_positive")?,
        labels.iter().filter(|&&y| y).count() as f64,
    )?;
    for (k, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_)] {
        close(
            k,
            meta["confusion"][k].as_f64().ok_or("confusion")?,
            v as f64,
        )?;
    }

    // ROC-AUC as the fraction of concordant (positive, negative) pairs.
    let (mut conc, mut pairs) = (0.0, 0.0);
    for i in (0..n).filter(|&i| labels[i]) {
        for j in (0..n).filter(|&j| !labels[j]) {
            pairs += 1.0;
            conc += if probs[i] > probs[j] {
                1.0
            } else if probs[i] == probs[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    close("roc_auc", num(&meta, "roc_auc")?, conc / pairs)?;

    // ECE over ten equal-width bins.
    let mut bins = vec![(0.0, 0.0, 0usize); 10];
    for (&p, &y) in probs.iter().zip(&labels) {
        let b = ((p * 10.0) as usize).min(9);
        bins[b].0 += p;
        bins[b].1 += f64::from(u8::from(y));
        bins[b].2 += 1;
    }
    let ece_re: f64 = bins
        .iter()
        .filter(|b| b.2 > 0)
        .map(|&(ps, ys, k)| k as f64 / n as f64 * (ps / k as f64 - ys / k as f64).abs())
        .sum();
    close("ece", num(&meta, "ece")?, ece_re)?;

    // Selective prediction: drop the examples nearest the threshold.
    let sel = &meta["selective"];
    let coverage = sel["coverage_target"].as_f64().ok_or("coverage_target")?;
    let drop = ((1.0 - coverage) * n as f64 - 1e-9).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        (probs[i] - t)
            .abs()
            .total_cmp(&(probs[j] - t).abs())
            .then(i.cmp(&j))
    });
    let kept: Vec<usize> = order[drop..].to_vec();
    let kp: Vec<f64> = kept.iter().map(|&i| probs[i]).collect();
    let kl: Vec<bool> = kept.iter().map(|&i| labels[i]).collect();
    let s = count_at(&kp, &kl, t);
    let (stp, sfp, sfn) = (s.tp as f64, s.fp as f64, s.fn_ as f64);
    close(
        "selective.abstained",
        sel["abstained"].as_f64().ok_or("abstained")?,
        drop as f64,
    )?;
    close(
        "selective.precision",
        sel["precision"].as_f64().ok_or("precision")?,
        if stp + sfp > 0.0 {
            stp / (stp + sfp)
        } else {
            0.0
        },
    )?;
    close(
        "selective.recall",
        sel["recall"].as_f64().ok_or("recall")?,
        if stp + sfn > 0.0 {
            stp / (stp + sfn)
        } else {
            0.0
        },
    )?;
    close(
        "selective.f1",
        sel["f1"].as_f64().ok_or("f1")?,
        2.0 * stp / (2.0 * stp + sfp + sfn),
    )?;
    Ok(n)
}

fn artifact_fidelity() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let p = |name: &str| dir.join(name).display().to_string();
    halt_rag(&["synth", "--n", "400", "--seed", "7", "--out", &p("data")])?;
    halt_rag(&[
        "extract",
        "--task",
        "synthetic",
        "--in",
        &p("data/synthetic.jsonl"),
        "--scores-a",
        &p("data/scores_a.tsv"),
        "--scores-b",
        &p("data/scores_b.tsv"),
        "--out",
        &p("features.tsv"),
    ])?;
    for run in ["run1", "run2"] {
        halt_rag(&[
            "evaluate",
            "--task",
            "synthetic",
            "--in",
            &p("features.tsv"),
            "--seed",
            "7",
            "--out",
            &p(run),
        ])?;
    }
    let (a, b) = (
        files_under(&dir.join("run1")),
        files_under(&dir.join("run2")),
    );
    ensure(a.keys().eq(b.keys()), || {
        format!("file sets differ: {:?} vs {:?}", a.keys(), b.keys())
    })?;
    for (name, bytes) in &a {
        ensure(b[name] == *bytes, || {
            format!("{name} differs between identical runs")
        })?;
    }
    let n = reread_and_recompute(&dir.join("run1"))?;
    Ok(format!(
        "{} files byte-identical across reruns; {n} records re-scored within 1e-12",
        a.len()
    ))
}

// ---------------------------------------------------------------------------
// Lexical metrics

fn is_subsequence(sub: &[u8], of: &[u8]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|o| o == s))
}

/// Longest common subsequence by trying every subsequence of the shorter list.
fn lcs_by_enumeration(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    (0u32..(1 << short.len()))
        .filter_map(|mask| {
            let sub: Vec<u8> = (0..short.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| short[i])
                .collect();
            is_subsequence(&sub, long).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn all_lists(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<u8>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|l| (0..3u8).map(move |s| [l.as_slice(), &[s]].concat()))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn lexical_oracles() -> Outcome {
    const NAMES: [&str; 3] = ["x", "y", "z"];
    let lists = all_lists(8);
    let mut pairs = 0usize;
    for a in &lists {
        let ta: Vec<&str> = a.iter().map(|&s| NAMES[s as usize]).collect();
        let sa: BTreeSet<u8> = a.iter().copied().collect();
        for b in lists.iter().filter(|b| a.len() + b.len() <= 10) {
            let tb: Vec<&str> = b.iter().map(|&s| NAMES[s as usize]).collect();
            let lcs = lcs_by_enumeration(a, b) as f64;
            let (p, r) = (lcs / b.len() as f64, lcs / a.len() as f64);
            let f = if lcs == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            let got = rouge_l(&ta, &tb).map_err(|e| e.to_string())?;
            ensure(
                (got.precision - p).abs() < 1e-12
                    && (got.recall - r).abs() < 1e-12
                    && (got.f_measure - f).abs() < 1e-12,
                || format!("ROUGE-L {a:?} {b:?}: {got:?}"),
            )?;
            let sb: BTreeSet<u8> = b.iter().copied().collect();
            let j = sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64;
            let got_j = jaccard(&ta, &tb).map_err(|e| e.to_string())?;
            ensure((got_j - j).abs() < 1e-12, || {
                format!("Jaccard {a:?} {b:?}: {got_j}")
            })?;
            pairs += 1;
        }
    }
    Ok(format!(
        "{pairs} list pairs over 3 symbols (each length 1..=8, combined <= 10)"
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let mut planted: Option<FeatureMatrix> = None;
    let mut planted_features = || planted.get_or_insert_with(planted_features).clone();

    let criteria: Vec<Criterion> = vec![
        ("isotonic oracle equivalence", 10, Box::new(isotonic_oracle)),
        (
            "threshold optimizer oracle equivalence",
            10,
            Box::new(threshold_oracle),
        ),
        ("gradient correctness", 30, {
            let f = planted_features();
            Box::new(move || gradient_check(&f))
        }),
        ("OOF purity", 30, {
            let f = planted_features();
            Box::new(move || oof_purity(&f))
        }),
        ("calibration quality", 60, {
            let f = planted_features();
            Box::new(move || calibration_quality(&f))
        }),
        ("end-to-end directionality", 120, {
            let f = planted_features();
            Box::new(move || end_to_end(&f))
        }),
        ("artifact fidelity", 60, Box::new(artifact_fidelity)),
        ("lexical oracles", 30, Box::new(lexical_oracles)),
    ];

    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= Duration::from_secs(budget) {
                Ok(detail)
            } else {
                Err(format!("{detail}; over the {budget} s budget"))
            }
        });
        let secs = elapsed.as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.2} s / {budget} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2} s / {budget} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
