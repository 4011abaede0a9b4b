//! Decision policies: precision-constrained thresholding, evaluation curves
//! and coverage-targeted abstention.
//!
//! An example is predicted hallucinated when `prob >= threshold`.

use serde::{Deserialize, Serialize};

use crate::calibration::{ece, reliability_bins, ReliabilityBin, ECE_BINS};
use crate::{Error, Result};

pub const DEFAULT_PRECISION_FLOOR: f64 = 0.70;
pub const DEFAULT_COVERAGE: f64 = 0.90;
/// F1 values this close count as tied; the larger threshold wins.
pub const F1_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Zero when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, written as `2tp / (2tp + fp + fn)`.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(probs: &[f64], labels: &[bool]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("no predictions to evaluate".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_both_classes(labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateLabels(format!(
            "need both classes, got {pos} positives of {}",
            labels.len()
        )));
    }
    Ok(())
}

pub fn confusion(probs: &[f64], labels: &[bool], threshold: f64) -> Result<Confusion> {
    check_inputs(probs, labels)?;
    let mut c = Confusion::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub threshold: f64,
    pub precision_floor: f64,
    pub coverage_target: Option<f64>,
}

/// Probabilities sorted ascending with a prefix count of positives, for
/// O(log n) confusion counts at any threshold.
struct SortedScores {
    probs: Vec<f64>,
    /// `pos_prefix[i]` = positives among the `i` smallest probabilities.
    pos_prefix: Vec<usize>,
}

impl SortedScores {
    fn new(probs: &[f64], labels: &[bool]) -> Self {
        let mut pairs: Vec<(f64, bool)> =
            probs.iter().copied().zip(labels.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pos_prefix = Vec::with_capacity(pairs.len() + 1);
        pos_prefix.push(0);
        for (_, y) in &pairs {
            pos_prefix.push(pos_prefix.last().unwrap() + usize::from(*y));
        }
        Self {
            probs: pairs.into_iter().map(|(p, _)| p).collect(),
            pos_prefix,
        }
    }

    fn confusion_at(&self, threshold: f64) -> Confusion {
        let n = self.probs.len();
        let total_pos = self.pos_prefix[n];
        let below = self.probs.partition_point(|&p| p < threshold);
        let pos_below = self.pos_prefix[below];
        let tp = total_pos - pos_below;
        let fp = (n - below) - tp;
        Confusion {
            tp,
            fp,
            tn: below - pos_below,
            fn_: pos_below,
        }
    }

    /// 0, 1 and the midpoint of every pair of consecutive distinct values.
    fn candidates(&self) -> Vec<f64> {
        let mut c = vec![0.0, 1.0];
        for w in self.probs.windows(2) {
            if w[0] != w[1] {
                c.push(0.5 * (w[0] + w[1]));
            }
        }
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

/// Maximise F1 subject to `precision >= precision_floor` over the candidate
/// thresholds. Near-ties in F1 go to the larger threshold.
pub fn optimize_threshold(
    probs: &[f64],
    labels: &[bool],
    precision_floor: f64,
) -> Result<DecisionPolicy> {
    check_inputs(probs, labels)?;
    check_both_classes(labels)?;
    if !(precision_floor > 0.0 && precision_floor <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "precision floor {precision_floor} outside (0, 1]"
        )));
    }
    let sorted = SortedScores::new(probs, labels);
    let scored: Vec<(f64, Confusion)> = sorted
        .candidates()
        .into_iter()
        .map(|t| (t, sorted.confusion_at(t)))
        .collect();

    let feasible: Vec<(f64, f64)> = scored
        .iter()
        .filter(|(_, c)| c.precision() >= precision_floor)
        .map(|(t, c)| (*t, c.f1()))
        .collect();
    if feasible.is_empty() {
        let max_precision = scored
            .iter()
            .filter(|(_, c)| c.tp + c.fp > 0)
            .map(|(_, c)| c.precision())
            .fold(0.0, f64::max);
        return Err(Error::InfeasiblePrecision {
            floor: precision_floor,
            max_precision,
        });
    }
    let best = feasible
        .iter()
        .map(|&(_, f)| f)
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = feasible
        .iter()
        .filter(|&&(_, f)| f >= best - F1_TIE_TOLERANCE)
        .map(|&(t, _)| t)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DecisionPolicy {
        threshold,
        precision_floor,
        coverage_target: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn distinct_descending(probs: &[f64]) -> Vec<f64> {
    let mut v = probs.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

/// One point per distinct probability, thresholds descending.
pub fn pr_curve(probs: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    check_inputs(probs, labels)?;
    check_both_classes(labels)?;
    let sorted = SortedScores::new(probs, labels);
    Ok(distinct_descending(probs)
        .into_iter()
        .map(|t| {
            let c = sorted.confusion_at(t);
            PrPoint {
                threshold: t,
                precision: c.precision(),
                recall: c.recall(),
            }
        })
        .collect())
}

/// ROC points from (0, 0) through every distinct threshold; AUC by the
/// trapezoidal rule.
pub fn roc_curve(probs: &[f64], labels: &[bool]) -> Result<RocCurve> {
    check_inputs(probs, labels)?;
    check_both_classes(labels)?;
    let sorted = SortedScores::new(probs, labels);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    for t in distinct_descending(probs) {
        let c = sorted.confusion_at(t);
        points.push(RocPoint {
            threshold: t,
            fpr: c.false_positive_rate(),
            tpr: c.recall(),
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveReport {
    pub coverage_target: f64,
    pub realized_coverage: f64,
    pub retained: usize,
    pub abstained: usize,
    #[serde(skip)]
    pub abstain_mask: Vec<bool>,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Nothing retained was predicted positive; precision is a convention.
    pub precision_undefined: bool,
    /// No retained example is positive; recall is a convention.
    pub recall_undefined: bool,
    /// The retained set holds at most one class.
    pub single_class: bool,
}

/// Number of abstentions for a coverage target: `ceil((1 - coverage) * n)`,
/// with a small slack so that e.g. 0.3 * 10 does not round up to 4.
pub fn abstention_count(n: usize, coverage_target: f64) -> usize {
    let raw = (1.0 - coverage_target) * n as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Abstain on the examples closest to the threshold (confidence
/// `|p - threshold|`, ties broken by lower index) and re-score the rest.
pub fn select_with_abstention(
    probs: &[f64],
    labels: &[bool],
    policy: &DecisionPolicy,
    coverage_target: f64,
) -> Result<SelectiveReport> {
    check_inputs(probs, labels)?;
    if !(coverage_target > 0.0 && coverage_target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "coverage target {coverage_target} outside (0, 1]"
        )));
    }
    let n = probs.len();
    let t = policy.threshold;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        (probs[i] - t)
            .abs()
            .total_cmp(&(probs[j] - t).abs())
            .then(i.cmp(&j))
    });
    let abstained = abstention_count(n, coverage_target);
    let mut abstain_mask = vec![false; n];
    for &i in &order[..abstained] {
        abstain_mask[i] = true;
    }

    let mut c = Confusion::default();
    for i in (0..n).filter(|&i| !abstain_mask[i]) {
        match (probs[i] >= t, labels[i]) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let retained = n - abstained;
    let positives = c.tp + c.fn_;
    Ok(SelectiveReport {
        coverage_target,
        realized_coverage: retained as f64 / n as f64,
        retained,
        abstained,
        abstain_mask,
        confusion: c,
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        accuracy: c.accuracy(),
        precision_undefined: c.tp + c.fp == 0,
        recall_undefined: positives == 0,
        single_class: positives == 0 || positives == retained,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub coverage_target: f64,
    pub realized_coverage: f64,
    pub retained: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Error rate on the retained set.
    pub risk: f64,
}

/// Coverage swept over 1.00, 0.99, ..., 0.50.
pub fn risk_coverage_curve(
    probs: &[f64],
    labels: &[bool],
    policy: &DecisionPolicy,
) -> Result<Vec<RiskCoveragePoint>> {
    (0..=50)
        .map(|i| {
            let coverage = f64::from(100 - i) / 100.0;
            let s = select_with_abstention(probs, labels, policy, coverage)?;
            Ok(RiskCoveragePoint {
                coverage_target: coverage,
                realized_coverage: s.realized_coverage,
                retained: s.retained,
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                risk: 1.0 - s.accuracy,
            })
        })
        .collect()
}

/// Everything reported for one set of calibrated predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub policy: DecisionPolicy,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub roc_auc: f64,
    pub ece: f64,
    pub pr_curve: Vec<PrPoint>,
    pub roc_curve: Vec<RocPoint>,
    pub reliability: Vec<ReliabilityBin>,
    pub risk_coverage: Vec<RiskCoveragePoint>,
    pub selective: Option<SelectiveReport>,
}

/// Score `probs` under `policy`; the selective block is filled when the
/// policy carries a coverage target.
pub fn evaluate(probs: &[f64], labels: &[bool], policy: &DecisionPolicy) -> Result<EvalReport> {
    let c = confusion(probs, labels, policy.threshold)?;
    let roc = roc_curve(probs, labels)?;
    let selective = policy
        .coverage_target
        .map(|cov| select_with_abstention(probs, labels, policy, cov))
        .transpose()?;
    Ok(EvalReport {
        n: probs.len(),
        policy: *policy,
        confusion: c,
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        accuracy: c.accuracy(),
        roc_auc: roc.auc,
        ece: ece(probs, labels, ECE_BINS)?,
        pr_curve: pr_curve(probs, labels)?,
        roc_curve: roc.points,
        reliability: reliability_bins(probs, labels, ECE_BINS)?,
        risk_coverage: risk_coverage_curve(probs, labels, policy)?,
        selective,
    })
}
