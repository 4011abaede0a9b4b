//! Linear meta-classifiers.
//!
//! Both models minimise
//!
//! ```text
//! 0.5 * |w|^2 + C * sum_i s(y_i) * loss(y~_i * (w . x~_i + b))
//! ```
//!
//! over standardized rows `x~`, with `y~ in {-1, +1}`, balanced class weights
//! `s` and an unregularized intercept. Logistic regression uses the log-loss,
//! the linear SVC the squared hinge. Optimisation is deterministic: damped
//! Newton steps (falling back to steepest descent whenever the Newton system
//! is unusable) with Armijo backtracking, so the objective never increases.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_C: f64 = 1.0;
pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 10_000;
const STD_FLOOR: f64 = 1e-12;
const ARMIJO: f64 = 1e-4;
/// Relative objective change treated as rounding noise by the line search.
const VALUE_ROUNDOFF: f64 = 1e-12;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "logreg")]
    LogReg,
    #[serde(rename = "linear_svc")]
    LinearSvc,
}

impl ClassifierKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassifierKind::LogReg => "logreg",
            ClassifierKind::LinearSvc => "linear_svc",
        }
    }

    /// Loss and its first two derivatives at margin `m`.
    fn loss(&self, m: f64) -> (f64, f64, f64) {
        match self {
            ClassifierKind::LogReg => {
                // log(1 + e^-m), evaluated without overflow
                let value = if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                };
                let sig_neg = sigmoid(-m);
                (value, -sig_neg, sig_neg * (1.0 - sig_neg))
            }
            ClassifierKind::LinearSvc => {
                let slack = 1.0 - m;
                if slack > 0.0 {
                    (slack * slack, -2.0 * slack, 2.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logreg" | "logistic_regression" => Ok(ClassifierKind::LogReg),
            "linear_svc" | "linearsvc" | "svc" => Ok(ClassifierKind::LinearSvc),
            other => Err(Error::Config(format!("unknown classifier '{other}'"))),
        }
    }
}

/// `1 / (1 + e^-z)`. A single expression keeps it monotone in floating
/// point; overflow of `e^-z` simply yields 0.
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-dimension z-scoring, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Input("cannot standardize zero rows".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Balanced weights `n / (2 * count_c)` for (faithful, hallucinated).
pub fn compute_class_weights(labels: &[bool]) -> Result<(f64, f64)> {
    let n = labels.len();
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::DegenerateLabels(format!(
            "class weights need both classes (got {n0} negatives, {n1} positives)"
        )));
    }
    Ok((n as f64 / (2.0 * n0 as f64), n as f64 / (2.0 * n1 as f64)))
}

/// The regularized, class-weighted training objective over standardized rows.
/// Parameters are packed as `[w_0, ..., w_{d-1}, b]`.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub kind: ClassifierKind,
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [bool],
    pub class_weights: (f64, f64),
    pub c: f64,
}

impl<'a> Objective<'a> {
    pub fn new(
        kind: ClassifierKind,
        rows: &'a [Vec<f64>],
        labels: &'a [bool],
        c: f64,
    ) -> Result<Self> {
        Ok(Self {
            kind,
            rows,
            labels,
            class_weights: compute_class_weights(labels)?,
            c,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Per-sample `(row, sign, class weight, loss derivatives)`.
    fn sample_terms<'s>(
        &'s self,
        theta: &'s [f64],
    ) -> impl Iterator<Item = (&'a Vec<f64>, f64, f64, (f64, f64, f64))> + 's {
        let d = self.dim();
        let (w, b) = (&theta[..d], theta[d]);
        self.rows.iter().zip(self.labels).map(move |(x, &y)| {
            let sign = if y { 1.0 } else { -1.0 };
            let s = if y {
                self.class_weights.1
            } else {
                self.class_weights.0
            };
            let m = sign * (dot(w, x) + b);
            (x, sign, s, self.kind.loss(m))
        })
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let d = self.dim();
        let reg = 0.5 * dot(&theta[..d], &theta[..d]);
        let data: f64 = self
            .sample_terms(theta)
            .map(|(_, _, s, (l, _, _))| s * l)
            .sum();
        reg + self.c * data
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = theta.to_vec();
        g[d] = 0.0;
        for (x, sign, s, (_, dl, _)) in self.sample_terms(theta) {
            let coef = self.c * s * dl * sign;
            for (gj, xj) in g[..d].iter_mut().zip(x) {
                *gj += coef * xj;
            }
            g[d] += coef;
        }
        g
    }

    /// Exact Hessian for the log-loss; the generalized Hessian (active set
    /// `margin < 1`) for the squared hinge.
    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
        for j in 0..d {
            h[(j, j)] = 1.0;
        }
        let mut xa = vec![1.0; d + 1];
        for (x, _, s, (_, _, d2)) in self.sample_terms(theta) {
            let coef = self.c * s * d2;
            if coef == 0.0 {
                continue;
            }
            xa[..d].copy_from_slice(x);
            for i in 0..=d {
                let ci = coef * xa[i];
                for j in 0..=i {
                    h[(i, j)] += ci * xa[j];
                }
            }
        }
        h.fill_upper_triangle_with_lower_triangle();
        h
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Optimizer diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Objective value before the first step and after every accepted step.
    pub objective: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimise `objective` starting from zero.
pub fn minimize(objective: &Objective<'_>, tol: f64, max_iter: usize) -> (Vec<f64>, FitTrace) {
    let p = objective.dim() + 1;
    let mut theta = vec![0.0; p];
    let mut f = objective.value(&theta);
    let mut g = objective.gradient(&theta);
    let mut trace = FitTrace {
        objective: vec![f],
        grad_norm: norm(&g),
        iterations: 0,
        converged: false,
    };

    while trace.iterations < max_iter {
        if trace.grad_norm <= tol {
            trace.converged = true;
            break;
        }
        let dir = newton_direction(objective, &theta, &g);
        let slope = dot(&g, &dir);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let fc = objective.value(&cand);
            if fc <= f + ARMIJO * step * slope && fc <= f {
                let gc = objective.gradient(&cand);
                accepted = Some((cand, fc, gc));
                break;
            }
            // Close to the optimum the decrease drops below the rounding
            // error of the objective; judge the step by the gradient instead.
            if (fc - f).abs() <= VALUE_ROUNDOFF * f.abs().max(1.0) {
                let gc = objective.gradient(&cand);
                if norm(&gc) < trace.grad_norm {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // No representable decrease left along the search direction.
            break;
        };
        if cand == theta {
            break;
        }
        theta = cand;
        f = fc;
        g = gc;
        trace.iterations += 1;
        trace.grad_norm = norm(&g);
        trace.objective.push(f);
    }
    if trace.grad_norm <= tol {
        trace.converged = true;
    }
    (theta, trace)
}

fn newton_direction(objective: &Objective<'_>, theta: &[f64], g: &[f64]) -> Vec<f64> {
    let steepest: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut h = objective.hessian(theta);
    // The intercept row can be singular when no sample is active.
    for i in 0..h.nrows() {
        h[(i, i)] += 1e-10;
    }
    let Some(chol) = h.cholesky() else {
        return steepest;
    };
    let dir = chol.solve(&DVector::from_column_slice(&steepest));
    if dir.iter().all(|v| v.is_finite()) && dot(g, dir.as_slice()) < 0.0 {
        dir.as_slice().to_vec()
    } else {
        steepest
    }
}

/// A trained meta-classifier together with the standardizer it was trained
/// behind. Weights live in standardized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: ClassifierKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub regularization_c: f64,
    pub standardizer: Standardizer,
    pub seed: u64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub fn fit(
    kind: ClassifierKind,
    rows: &[Vec<f64>],
    labels: &[bool],
    c: f64,
    seed: u64,
) -> Result<LinearModel> {
    fit_with_trace(kind, rows, labels, c, seed).map(|(m, _)| m)
}

pub fn fit_with_trace(
    kind: ClassifierKind,
    rows: &[Vec<f64>],
    labels: &[bool],
    c: f64,
    seed: u64,
) -> Result<(LinearModel, FitTrace)> {
    if rows.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "C must be positive, got {c}"
        )));
    }
    compute_class_weights(labels)?;
    let d = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(Error::Input(format!(
                "row {i} has {} features, expected {d}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("row {i} has a non-finite feature")));
        }
    }

    let standardizer = Standardizer::fit(rows)?;
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.transform(r)).collect();
    let objective = Objective::new(kind, &scaled, labels, c)?;
    let (theta, trace) = minimize(&objective, GRAD_TOLERANCE, MAX_ITERATIONS);

    let model = LinearModel {
        kind,
        weights: theta[..d].to_vec(),
        bias: theta[d],
        regularization_c: c,
        standardizer,
        seed,
        grad_norm: trace.grad_norm,
        iterations: trace.iterations,
    };
    Ok((model, trace))
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `w . standardize(x) + b`.
    pub fn decision_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Input(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(dot(&self.weights, &self.standardizer.transform(x)) + self.bias)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join("\t");
        format!(
            "kind\t{}\nc\t{}\nseed\t{}\nmean\t{}\nstd\t{}\nweights\t{}\nbias\t{}\ngrad_norm\t{}\niterations\t{}\n",
            self.kind,
            self.regularization_c,
            self.seed,
            join(&self.standardizer.mean),
            join(&self.standardizer.std),
            join(&self.weights),
            self.bias,
            self.grad_norm,
            self.iterations
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, rest) = line.split_once('\t').unwrap_or((line, ""));
            fields.insert(key.to_string(), rest.to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("model text lacks '{k}'")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("model field '{k}' is not a number")))
        };
        let vec = |k: &str| -> Result<Vec<f64>> {
            let s = get(k)?;
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split('\t')
                .map(|v| {
                    v.parse().map_err(|_| {
                        Error::Format(format!("model field '{k}' has bad value {v:?}"))
                    })
                })
                .collect()
        };
        let model = LinearModel {
            kind: get("kind")?.parse()?,
            regularization_c: num("c")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Format("model seed is not an integer".into()))?,
            standardizer: Standardizer {
                mean: vec("mean")?,
                std: vec("std")?,
            },
            weights: vec("weights")?,
            bias: num("bias")?,
            grad_norm: num("grad_norm")?,
            iterations: get("iterations")?
                .parse()
                .map_err(|_| Error::Format("model iterations is not an integer".into()))?,
        };
        if model.standardizer.mean.len() != model.dim()
            || model.standardizer.std.len() != model.dim()
        {
            return Err(Error::Format(
                "standardizer and weight dimensions differ".into(),
            ));
        }
        Ok(model)
    }
}
