//! Score-to-probability calibration and calibration error.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::models::sigmoid;
use crate::{Error, Result};

pub const ECE_BINS: usize = 10;
const PLATT_GRAD_TOLERANCE: f64 = 1e-10;
const PLATT_MAX_ITER: usize = 200;
const PLATT_MIN_STEP: f64 = 1e-10;
const PLATT_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMethod {
    Platt,
    Isotonic,
}

impl CalibrationMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CalibrationMethod::Platt => "platt",
            CalibrationMethod::Isotonic => "isotonic",
        }
    }
}

impl fmt::Display for CalibrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CalibrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "platt" => Ok(CalibrationMethod::Platt),
            "isotonic" => Ok(CalibrationMethod::Isotonic),
            other => Err(Error::Config(format!(
                "unknown calibration method '{other}'"
            ))),
        }
    }
}

/// A monotone map from raw decision score to probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum Calibrator {
    /// `sigmoid(a * score + b)`
    Platt { a: f64, b: f64 },
    /// Piecewise-linear through the knots, flat outside them.
    Isotonic {
        knot_scores: Vec<f64>,
        knot_values: Vec<f64>,
    },
}

impl Calibrator {
    pub fn fit(method: CalibrationMethod, scores: &[f64], labels: &[bool]) -> Result<Self> {
        match method {
            CalibrationMethod::Platt => fit_platt(scores, labels),
            CalibrationMethod::Isotonic => fit_isotonic(scores, labels),
        }
    }

    pub fn method(&self) -> CalibrationMethod {
        match self {
            Calibrator::Platt { .. } => CalibrationMethod::Platt,
            Calibrator::Isotonic { .. } => CalibrationMethod::Isotonic,
        }
    }

    pub fn apply(&self, score: f64) -> f64 {
        match self {
            Calibrator::Platt { a, b } => sigmoid(a * score + b),
            Calibrator::Isotonic {
                knot_scores: xs,
                knot_values: ys,
            } => {
                let last = xs.len() - 1;
                if score <= xs[0] {
                    return ys[0];
                }
                if score >= xs[last] {
                    return ys[last];
                }
                let i = xs.partition_point(|&x| x <= score) - 1;
                let frac = (score - xs[i]) / (xs[i + 1] - xs[i]);
                // Clamped so rounding never pushes a value past the next knot.
                (ys[i] + frac * (ys[i + 1] - ys[i])).clamp(ys[i], ys[i + 1])
            }
        }
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join("\t");
        match self {
            Calibrator::Platt { a, b } => format!("calibrator\tplatt\na\t{a}\nb\t{b}\n"),
            Calibrator::Isotonic {
                knot_scores,
                knot_values,
            } => format!(
                "calibrator\tisotonic\nknot_scores\t{}\nknot_values\t{}\n",
                join(knot_scores),
                join(knot_values)
            ),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('\t').unwrap_or((line, ""));
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("calibrator text lacks '{k}'")))
        };
        let nums = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split('\t')
                .map(|v| {
                    v.parse().map_err(|_| {
                        Error::Format(format!("calibrator field '{k}' has bad value {v:?}"))
                    })
                })
                .collect()
        };
        match get("calibrator")? {
            "platt" => Ok(Calibrator::Platt {
                a: nums("a")?[0],
                b: nums("b")?[0],
            }),
            "isotonic" => {
                let knot_scores = nums("knot_scores")?;
                let knot_values = nums("knot_values")?;
                let ok = !knot_scores.is_empty()
                    && knot_scores.len() == knot_values.len()
                    && knot_scores.windows(2).all(|w| w[0] < w[1])
                    && knot_values.windows(2).all(|w| w[0] <= w[1]);
                if !ok {
                    return Err(Error::Format("isotonic knots are not monotone".into()));
                }
                Ok(Calibrator::Isotonic {
                    knot_scores,
                    knot_values,
                })
            }
            other => Err(Error::Format(format!(
                "unknown calibrator variant '{other}'"
            ))),
        }
    }
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("calibration scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "calibration needs both classes (got {neg} negatives, {pos} positives)"
        )));
    }
    Ok((neg, pos))
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Platt scaling by Newton's method on the smoothed-target log-likelihood,
/// targets `(N+ + 1) / (N+ + 2)` for positives and `1 / (N- + 2)` for
/// negatives.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<Calibrator> {
    let (neg, pos) = check_binary(scores, labels)?;
    let hi = (pos as f64 + 1.0) / (pos as f64 + 2.0);
    let lo = 1.0 / (neg as f64 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();

    let nll = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(s, t)| {
                let z = a * s + b;
                softplus(z) - t * z
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((pos as f64 + 1.0) / (neg as f64 + 1.0)).ln();
    let mut f = nll(a, b);
    for _ in 0..PLATT_MAX_ITER {
        let (mut ga, mut gb) = (0.0, 0.0);
        let (mut haa, mut hab, mut hbb) = (PLATT_RIDGE, 0.0, PLATT_RIDGE);
        for (s, t) in scores.iter().zip(&targets) {
            let p = sigmoid(a * s + b);
            let d1 = p - t;
            let d2 = p * (1.0 - p);
            ga += d1 * s;
            gb += d1;
            haa += d2 * s * s;
            hab += d2 * s;
            hbb += d2;
        }
        if ga.hypot(gb) <= PLATT_GRAD_TOLERANCE {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det);
        let slope = ga * da + gb * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= PLATT_MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf <= f + 1e-4 * step * slope {
                a = na;
                b = nb;
                f = nf;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(Calibrator::Platt { a, b })
}

/// Weighted pool-adjacent-violators. Returns the nondecreasing least-squares
/// fit, one value per input position.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // (weighted sum, total weight, number of inputs pooled)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v * w, w, 1));
        while blocks.len() >= 2 {
            let (s2, w2, c2) = blocks[blocks.len() - 1];
            let (s1, w1, c1) = blocks[blocks.len() - 2];
            if s1 / w1 > s2 / w2 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (s1 + s2, w1 + w2, c1 + c2);
            } else {
                break;
            }
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, w, c)| std::iter::repeat_n(s / w, c))
        .collect()
}

/// Isotonic least-squares fit of `targets` on `scores`, with tied scores
/// pooled first. Returns the calibrator and the fitted value at each input
/// (in input order).
pub fn isotonic_regression(scores: &[f64], targets: &[f64]) -> Result<(Calibrator, Vec<f64>)> {
    if scores.is_empty() || scores.len() != targets.len() {
        return Err(Error::Input(format!(
            "isotonic regression needs matching non-empty inputs ({} scores, {} targets)",
            scores.len(),
            targets.len()
        )));
    }
    if scores.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Input("isotonic inputs must be finite".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));

    // Group equal scores: (score, mean target, count, members).
    let mut group_scores = Vec::new();
    let mut group_means = Vec::new();
    let mut group_weights = Vec::new();
    let mut group_of = vec![0usize; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start;
        let mut sum = 0.0;
        while end < order.len() && scores[order[end]].total_cmp(&s) == Ordering::Equal {
            sum += targets[order[end]];
            group_of[order[end]] = group_scores.len();
            end += 1;
        }
        let count = (end - start) as f64;
        group_scores.push(s);
        group_means.push(sum / count);
        group_weights.push(count);
        start = end;
    }

    let fitted_groups = pava(&group_means, &group_weights);

    // One knot at each end of every constant run.
    let mut knot_scores = Vec::new();
    let mut knot_values = Vec::new();
    let mut g = 0;
    while g < fitted_groups.len() {
        let v = fitted_groups[g];
        let mut h = g;
        while h + 1 < fitted_groups.len() && fitted_groups[h + 1] == v {
            h += 1;
        }
        knot_scores.push(group_scores[g]);
        knot_values.push(v);
        if h > g {
            knot_scores.push(group_scores[h]);
            knot_values.push(v);
        }
        g = h + 1;
    }

    let fitted = group_of.iter().map(|&g| fitted_groups[g]).collect();
    Ok((
        Calibrator::Isotonic {
            knot_scores,
            knot_values,
        },
        fitted,
    ))
}

pub fn fit_isotonic(scores: &[f64], labels: &[bool]) -> Result<Calibrator> {
    check_binary(scores, labels)?;
    let targets: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    isotonic_regression(scores, &targets).map(|(c, _)| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Equal-width bins over [0, 1]; the last bin is closed on the right.
/// Empty bins report zero confidence and accuracy.
pub fn reliability_bins(
    probs: &[f64],
    labels: &[bool],
    bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument(
            "calibration error of an empty set".into(),
        ));
    }
    if probs.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        conf[b] += p;
        hits[b] += usize::from(y);
        count[b] += 1;
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b];
            ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count: n,
                mean_confidence: if n == 0 { 0.0 } else { conf[b] / n as f64 },
                accuracy: if n == 0 {
                    0.0
                } else {
                    hits[b] as f64 / n as f64
                },
            }
        })
        .collect())
}

/// Expected calibration error: `sum_b (n_b / n) * |accuracy_b - confidence_b|`.
pub fn ece(probs: &[f64], labels: &[bool], bins: usize) -> Result<f64> {
    let n = probs.len() as f64;
    Ok(reliability_bins(probs, labels, bins)?
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs())
        .sum())
}
