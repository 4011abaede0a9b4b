//! Universal feature extraction.
//!
//! Every example becomes a fixed 17-slot vector:
//!
//! | index | feature |
//! |-------|---------|
//! | 0..6  | backend A: max entail, max neutral, max contradict, mean entail, mean neutral, mean contradict |
//! | 6..12 | backend B, same order |
//! | 12    | source token count |
//! | 13    | hypothesis token count |
//! | 14    | hypothesis / source length ratio |
//! | 15    | ROUGE-L F-measure |
//! | 16    | Jaccard similarity of token sets |
//!
//! A [`FeatureMask`] removes slots for ablation runs; masked vectors shrink.

use std::collections::HashSet;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureMatrix, LabeledExample};
use crate::nli_backend::{NliBackend, WindowPair};
use crate::{Error, Result};

pub const WINDOW_SIZE: usize = 320;
pub const WINDOW_STRIDE: usize = 320;
pub const FEATURE_DIM: usize = 17;

/// Stand-in token for texts that tokenise to nothing.
pub const PLACEHOLDER_TOKEN: &str = "<empty>";

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "a_max_entail",
    "a_max_neutral",
    "a_max_contradict",
    "a_mean_entail",
    "a_mean_neutral",
    "a_mean_contradict",
    "b_max_entail",
    "b_max_neutral",
    "b_max_contradict",
    "b_mean_entail",
    "b_mean_neutral",
    "b_mean_contradict",
    "source_tokens",
    "hypothesis_tokens",
    "length_ratio",
    "rouge_l_f",
    "jaccard",
];

const ENTAIL_SLOTS: [usize; 4] = [0, 3, 6, 9];
const CONTRADICT_SLOTS: [usize; 4] = [2, 5, 8, 11];
const LEXICAL_SLOTS: Range<usize> = 12..17;

/// Class probabilities for one premise/hypothesis window pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliDistribution {
    pub entail: f64,
    pub neutral: f64,
    pub contradict: f64,
}

impl NliDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(entail: f64, neutral: f64, contradict: f64) -> Result<Self> {
        let d = Self {
            entail,
            neutral,
            contradict,
        };
        d.validate()?;
        Ok(d)
    }

    /// Divide nonnegative masses by their sum.
    pub fn normalized(entail: f64, neutral: f64, contradict: f64) -> Result<Self> {
        let sum = entail + neutral + contradict;
        if !(sum.is_finite() && sum > 0.0) || entail < 0.0 || neutral < 0.0 || contradict < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cannot normalise masses ({entail}, {neutral}, {contradict})"
            )));
        }
        Self::new(entail / sum, neutral / sum, contradict / sum)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.entail, self.neutral, self.contradict]
    }

    pub fn sum(&self) -> f64 {
        self.entail + self.neutral + self.contradict
    }

    fn validate(&self) -> Result<()> {
        for p in self.as_array() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        if (self.sum() - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {}",
                self.sum()
            )));
        }
        Ok(())
    }
}

/// Lowercase, split on Unicode whitespace, then peel leading and trailing
/// punctuation off each chunk as single-character tokens. Punctuation inside
/// a word ("don't", "u.s") stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let start = chars
            .iter()
            .position(|c| c.is_alphanumeric())
            .unwrap_or(chars.len());
        let end = chars
            .iter()
            .rposition(|c| c.is_alphanumeric())
            .map_or(start, |i| i + 1);
        tokens.extend(chars[..start].iter().map(|c| c.to_string()));
        if start < end {
            tokens.push(chars[start..end].iter().collect());
        }
        tokens.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    tokens
}

/// Partition `len` tokens into contiguous spans of `size`; the last span may
/// be shorter.
pub fn make_windows(len: usize, size: usize, stride: usize) -> Result<Vec<Range<usize>>> {
    if size == 0 {
        return Err(Error::InvalidArgument("window size must be >= 1".into()));
    }
    if stride != size {
        return Err(Error::InvalidArgument(format!(
            "windows are non-overlapping: stride {stride} must equal size {size}"
        )));
    }
    if len == 0 {
        return Err(Error::DegenerateInput(
            "cannot window an empty token list".into(),
        ));
    }
    Ok((0..len)
        .step_by(stride)
        .map(|start| start..(start + size).min(len))
        .collect())
}

/// Windows at the fixed production size and stride.
pub fn default_windows(len: usize) -> Result<Vec<Range<usize>>> {
    make_windows(len, WINDOW_SIZE, WINDOW_STRIDE)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Length of the longest common subsequence, two-row DP.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L with `a` as the reference: precision is measured against `b`,
/// recall against `a`.
pub fn rouge_l<T: PartialEq>(a: &[T], b: &[T]) -> Result<RougeL> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateInput(
            "ROUGE-L needs two non-empty token lists".into(),
        ));
    }
    let lcs = lcs_len(a, b) as f64;
    let precision = lcs / b.len() as f64;
    let recall = lcs / a.len() as f64;
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(RougeL {
        precision,
        recall,
        f_measure,
    })
}

pub fn jaccard<S: AsRef<str>>(a: &[S], b: &[S]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateInput(
            "Jaccard needs two non-empty token lists".into(),
        ));
    }
    let sa: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let sb: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Max and mean pooling per class:
/// `(max_e, max_n, max_c, mean_e, mean_n, mean_c)`.
pub fn pool_distributions(scores: &[NliDistribution]) -> Result<[f64; 6]> {
    if scores.is_empty() {
        return Err(Error::DegenerateInput("nothing to pool".into()));
    }
    let mut max = [f64::NEG_INFINITY; 3];
    let mut min = [f64::INFINITY; 3];
    let mut sum = [0.0; 3];
    for d in scores {
        for (k, p) in d.as_array().into_iter().enumerate() {
            max[k] = max[k].max(p);
            min[k] = min[k].min(p);
            sum[k] += p;
        }
    }
    let n = scores.len() as f64;
    // The rounded running sum can land an ulp outside [min, max].
    let mean = [0, 1, 2].map(|k| (sum[k] / n).clamp(min[k], max[k]));
    Ok([max[0], max[1], max[2], mean[0], mean[1], mean[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendSlot {
    A,
    B,
}

/// Ablation mask. Removed slots are dropped from the vector, not zeroed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub drop_contradiction: bool,
    pub drop_entailment: bool,
    pub drop_lexical: bool,
    pub single_backend: Option<BackendSlot>,
}

impl FeatureMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// Full-layout indices that survive the mask, ascending.
    pub fn kept_indices(&self) -> Vec<usize> {
        (0..FEATURE_DIM).filter(|&i| self.keeps(i)).collect()
    }

    pub fn keeps(&self, index: usize) -> bool {
        if self.drop_contradiction && CONTRADICT_SLOTS.contains(&index) {
            return false;
        }
        if self.drop_entailment && ENTAIL_SLOTS.contains(&index) {
            return false;
        }
        if self.drop_lexical && LEXICAL_SLOTS.contains(&index) {
            return false;
        }
        match self.single_backend {
            Some(BackendSlot::A) if (6..12).contains(&index) => false,
            Some(BackendSlot::B) if (0..6).contains(&index) => false,
            _ => true,
        }
    }

    pub fn dim(&self) -> usize {
        self.kept_indices().len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.kept_indices()
            .into_iter()
            .map(|i| FEATURE_NAMES[i].to_string())
            .collect()
    }

    pub fn apply(&self, full: &[f64]) -> Result<Vec<f64>> {
        if full.len() != FEATURE_DIM {
            return Err(Error::Input(format!(
                "mask expects a {FEATURE_DIM}-slot vector, got {}",
                full.len()
            )));
        }
        Ok(self.kept_indices().into_iter().map(|i| full[i]).collect())
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

impl std::fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if self.drop_contradiction {
            parts.push("drop_contradiction");
        }
        if self.drop_entailment {
            parts.push("drop_entailment");
        }
        if self.drop_lexical {
            parts.push("drop_lexical");
        }
        match self.single_backend {
            Some(BackendSlot::A) => parts.push("single_a"),
            Some(BackendSlot::B) => parts.push("single_b"),
            None => {}
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

impl std::str::FromStr for FeatureMask {
    type Err = Error;

    /// Comma-separated flags: `drop_contradiction`, `drop_entailment`,
    /// `drop_lexical`, `single_a`, `single_b`, or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let mut mask = FeatureMask::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "none" | "full" => {}
                "drop_contradiction" => mask.drop_contradiction = true,
                "drop_entailment" => mask.drop_entailment = true,
                "drop_lexical" => mask.drop_lexical = true,
                "single_a" => mask.single_backend = Some(BackendSlot::A),
                "single_b" => mask.single_backend = Some(BackendSlot::B),
                other => {
                    return Err(Error::Config(format!("unknown mask flag '{other}'")));
                }
            }
        }
        Ok(mask)
    }
}

/// A built (possibly masked) feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Set when either text tokenised to nothing and a placeholder was used.
    pub placeholder_used: bool,
}

/// Tokens of an example with empty texts replaced by the placeholder.
pub(crate) fn example_tokens(example: &LabeledExample) -> (Vec<String>, Vec<String>, bool) {
    let mut placeholder = false;
    let mut guard = |mut t: Vec<String>| {
        if t.is_empty() {
            placeholder = true;
            t.push(PLACEHOLDER_TOKEN.to_string());
        }
        t
    };
    let source = guard(tokenize(&example.source_text));
    let hypothesis = guard(tokenize(&example.generated_text));
    (source, hypothesis, placeholder)
}

fn score_and_pool(
    backend: &dyn NliBackend,
    example_id: &str,
    source: &[String],
    hypothesis: &[String],
    premise_windows: &[Range<usize>],
    hypothesis_windows: &[Range<usize>],
) -> Result<[f64; 6]> {
    let mut scores = Vec::with_capacity(premise_windows.len() * hypothesis_windows.len());
    for (p, pw) in premise_windows.iter().enumerate() {
        for (h, hw) in hypothesis_windows.iter().enumerate() {
            let pair = WindowPair {
                example_id,
                premise_index: p,
                hypothesis_index: h,
                premise: &source[pw.clone()],
                hypothesis: &hypothesis[hw.clone()],
            };
            let d = backend.score(&pair).map_err(|e| Error::Backend {
                example_id: example_id.to_string(),
                source: Box::new(e),
            })?;
            scores.push(d);
        }
    }
    pool_distributions(&scores)
}

/// The full 17-slot vector for one example.
pub fn build_full_vector(
    example: &LabeledExample,
    backend_a: &dyn NliBackend,
    backend_b: &dyn NliBackend,
) -> Result<FeatureVector> {
    let (source, hypothesis, placeholder_used) = example_tokens(example);
    let premise_windows = default_windows(source.len())?;
    let hypothesis_windows = default_windows(hypothesis.len())?;

    let mut values = Vec::with_capacity(FEATURE_DIM);
    for backend in [backend_a, backend_b] {
        values.extend(score_and_pool(
            backend,
            &example.id,
            &source,
            &hypothesis,
            &premise_windows,
            &hypothesis_windows,
        )?);
    }

    let src_len = source.len() as f64;
    let hyp_len = hypothesis.len() as f64;
    values.push(src_len);
    values.push(hyp_len);
    values.push(hyp_len / src_len.max(1.0));
    values.push(rouge_l(&source, &hypothesis)?.f_measure);
    values.push(jaccard(&source, &hypothesis)?);

    Ok(FeatureVector {
        values,
        placeholder_used,
    })
}

pub fn build_feature_vector(
    example: &LabeledExample,
    backend_a: &dyn NliBackend,
    backend_b: &dyn NliBackend,
    mask: &FeatureMask,
) -> Result<FeatureVector> {
    let full = build_full_vector(example, backend_a, backend_b)?;
    Ok(FeatureVector {
        values: mask.apply(&full.values)?,
        placeholder_used: full.placeholder_used,
    })
}

/// Extract features for a whole dataset. Examples are scored in parallel;
/// row order follows the input order.
pub fn extract_features(
    examples: &[LabeledExample],
    backend_a: &dyn NliBackend,
    backend_b: &dyn NliBackend,
    mask: &FeatureMask,
) -> Result<FeatureMatrix> {
    let rows = examples
        .par_iter()
        .map(|ex| build_feature_vector(ex, backend_a, backend_b, mask).map(|v| v.values))
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::new(
        examples.iter().map(|e| e.id.clone()).collect(),
        mask.column_names(),
        rows,
        examples.iter().map(|e| e.label).collect(),
    )
}
