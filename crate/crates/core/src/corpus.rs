//! Datasets and feature-matrix persistence.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::features::{default_windows, tokenize, FeatureMask, NliDistribution};
use crate::nli_backend::{BackendId, ScoreKey, ScoreTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Summarization,
    Qa,
    Dialogue,
    Synthetic,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Summarization => "summarization",
            Task::Qa => "qa",
            Task::Dialogue => "dialogue",
            Task::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "summarization" => Ok(Task::Summarization),
            "qa" => Ok(Task::Qa),
            "dialogue" => Ok(Task::Dialogue),
            "synthetic" => Ok(Task::Synthetic),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

/// One verification instance. `label == true` marks a hallucinated output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    #[serde(rename = "source")]
    pub source_text: String,
    #[serde(rename = "generated")]
    pub generated_text: String,
    #[serde(with = "label01")]
    pub label: bool,
    pub task: Task,
}

impl LabeledExample {
    pub fn new(
        id: impl Into<String>,
        source_text: impl Into<String>,
        generated_text: impl Into<String>,
        label: bool,
        task: Task,
    ) -> Result<Self> {
        let ex = Self {
            id: id.into(),
            source_text: source_text.into(),
            generated_text: generated_text.into(),
            label,
            task,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidArgument(format!(
                "example id {:?} must be non-empty without tabs or newlines",
                self.id
            )));
        }
        if self.source_text.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "example {}: empty source text",
                self.id
            )));
        }
        if self.generated_text.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "example {}: empty generated text",
                self.id
            )));
        }
        Ok(())
    }
}

/// Labels travel as 0/1 integers in every file format.
pub(crate) mod label01 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(label: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*label))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(de::Error::custom(format!(
                "label must be 0 or 1, got {other}"
            ))),
        }
    }
}

fn check_unique_ids(examples: &[LabeledExample]) -> Result<()> {
    let mut seen = HashSet::with_capacity(examples.len());
    for ex in examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate example id '{}'",
                ex.id
            )));
        }
    }
    Ok(())
}

/// Load a HaluEval line-delimited file.
///
/// Each record yields two examples: `<line>_neg` pairs the source with the
/// faithful output (label 0) and `<line>_pos` with the hallucinated one
/// (label 1). `<line>` is the zero-based line index in the file.
///
/// | task | source | faithful | hallucinated |
/// |------|--------|----------|--------------|
/// | summarization | `document` | `right_summary` | `hallucinated_summary` |
/// | qa | `knowledge` + "\n" + `question` | `right_answer` | `hallucinated_answer` |
/// | dialogue | `knowledge` + "\n" + `dialogue_history` | `right_response` | `hallucinated_response` |
pub fn load_halueval(path: impl AsRef<Path>, task: Task) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    if task == Task::Synthetic {
        return Err(Error::Config(
            "the synthetic task has no HaluEval layout; use read_examples".into(),
        ));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let record: Value =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("invalid JSON: {e}")))?;
        let field = |name: &str| -> Result<String> {
            let text = match record.get(name) {
                Some(Value::String(s)) => s.clone(),
                // Some dumps store the dialogue history as a list of turns.
                Some(Value::Array(turns)) => turns
                    .iter()
                    .map(|t| match t {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join("\n"),
                Some(_) => return Err(parse_err(format!("field '{name}' is not text"))),
                None => return Err(parse_err(format!("missing field '{name}'"))),
            };
            if text.trim().is_empty() {
                return Err(parse_err(format!("field '{name}' is empty")));
            }
            Ok(text)
        };
        let (source, faithful, hallucinated) = match task {
            Task::Summarization => (
                field("document")?,
                field("right_summary")?,
                field("hallucinated_summary")?,
            ),
            Task::Qa => (
                format!("{}\n{}", field("knowledge")?, field("question")?),
                field("right_answer")?,
                field("hallucinated_answer")?,
            ),
            Task::Dialogue => (
                format!("{}\n{}", field("knowledge")?, field("dialogue_history")?),
                field("right_response")?,
                field("hallucinated_response")?,
            ),
            Task::Synthetic => unreachable!(),
        };
        examples.push(LabeledExample::new(
            format!("{idx}_neg"),
            source.clone(),
            faithful,
            false,
            task,
        )?);
        examples.push(LabeledExample::new(
            format!("{idx}_pos"),
            source,
            hallucinated,
            true,
            task,
        )?);
    }
    Ok(examples)
}

/// Read examples in the canonical line-delimited layout
/// (`id`, `source`, `generated`, `label`, `task`).
pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: LabeledExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        ex.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    check_unique_ids(&out)?;
    Ok(out)
}

pub fn write_examples(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// A planted corpus plus the two score tables its "NLI models" produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub examples: Vec<LabeledExample>,
    pub scores_a: ScoreTable,
    pub scores_b: ScoreTable,
}

const SOURCE_VOCAB: usize = 3000;
const NOVEL_VOCAB: usize = 5000;
/// Shift of the per-backend latent score between the two classes.
const PLANTED_SEPARATION: f64 = 0.9;

/// Generate a labelled corpus with planted signal.
///
/// Sources are random word sequences; each hypothesis is a contiguous slice
/// of its source with a fraction of tokens swapped for unseen words, and
/// hallucinated examples swap more. Each backend draws an independent
/// per-example latent score shifted by the label, then per-window logits in
/// which contradiction rises and entailment falls with that latent.
pub fn generate_synthetic(n: usize, seed: u64) -> Result<SyntheticCorpus> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpus needs n >= 2, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent_noise = Normal::new(0.0, 1.0).expect("valid normal");
    let window_noise = Normal::new(0.0, 0.3).expect("valid normal");

    let mut examples = Vec::with_capacity(n);
    let mut scores_a = ScoreTable::new(BackendId::new("planted-a", format!("seed-{seed}")));
    let mut scores_b = ScoreTable::new(BackendId::new("planted-b", format!("seed-{seed}")));

    for i in 0..n {
        let label = rng.random_bool(0.5);

        let src_len = rng.random_range(30..=420usize);
        let mut source: Vec<String> = Vec::with_capacity(src_len);
        for j in 0..src_len {
            let mut w = format!("w{}", rng.random_range(0..SOURCE_VOCAB));
            if j % 12 == 11 {
                w.push('.');
            }
            source.push(w);
        }

        let hyp_len = rng.random_range(8..=40usize).min(src_len);
        let start = rng.random_range(0..=src_len - hyp_len);
        let swap_rate = if label {
            rng.random_range(0.15..0.45)
        } else {
            rng.random_range(0.0..0.30)
        };
        let hypothesis: Vec<String> = source[start..start + hyp_len]
            .iter()
            .map(|w| {
                if rng.random_bool(swap_rate) {
                    format!("n{}", rng.random_range(0..NOVEL_VOCAB))
                } else {
                    w.clone()
                }
            })
            .collect();

        let example = LabeledExample::new(
            format!("syn_{i:05}"),
            source.join(" "),
            hypothesis.join(" "),
            label,
            Task::Synthetic,
        )?;

        let pw = default_windows(tokenize(&example.source_text).len())?.len();
        let hw = default_windows(tokenize(&example.generated_text).len())?.len();
        let sign = if label { 1.0 } else { -1.0 };
        for table in [&mut scores_a, &mut scores_b] {
            let latent = sign * PLANTED_SEPARATION + latent_noise.sample(&mut rng);
            for p in 0..pw {
                for h in 0..hw {
                    let e = (-1.5 * latent + window_noise.sample(&mut rng)).exp();
                    let c = (1.5 * latent + window_noise.sample(&mut rng)).exp();
                    let m = window_noise.sample(&mut rng).exp();
                    table.insert(
                        ScoreKey {
                            example_id: example.id.clone(),
                            premise_window: p,
                            hypothesis_window: h,
                        },
                        NliDistribution::normalized(e, m, c)?,
                    )?;
                }
            }
        }
        examples.push(example);
    }

    Ok(SyntheticCorpus {
        examples,
        scores_a,
        scores_b,
    })
}

pub const FEATURE_LAYOUT_VERSION: u32 = 1;
const FEATURE_MAGIC: &str = "#halt-features";

/// Extracted features, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub layout_version: u32,
}

impl FeatureMatrix {
    pub fn new(
        ids: Vec<String>,
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<bool>,
    ) -> Result<Self> {
        let m = Self {
            ids,
            columns,
            rows,
            labels,
            layout_version: FEATURE_LAYOUT_VERSION,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if self.rows.len() != n || self.labels.len() != n {
            return Err(Error::Input(format!(
                "{} ids, {} rows, {} labels",
                n,
                self.rows.len(),
                self.labels.len()
            )));
        }
        if self.columns.is_empty() {
            return Err(Error::Input("feature matrix has no columns".into()));
        }
        for (id, row) in self.ids.iter().zip(&self.rows) {
            if row.len() != self.columns.len() {
                return Err(Error::Input(format!(
                    "row '{id}' has {} entries, expected {}",
                    row.len(),
                    self.columns.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("row '{id}' has a non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Keep only the columns the mask retains. Columns are matched by name,
    /// so the mask must refer to columns this matrix still has.
    pub fn apply_mask(&self, mask: &FeatureMask) -> Result<FeatureMatrix> {
        let keep = mask
            .column_names()
            .iter()
            .map(|name| {
                self.columns.iter().position(|c| c == name).ok_or_else(|| {
                    Error::Config(format!(
                        "mask '{mask}' needs column '{name}', which is absent"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix {
            ids: self.ids.clone(),
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&j| r[j]).collect())
                .collect(),
            labels: self.labels.clone(),
            layout_version: self.layout_version,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Header record, column record, then one tab-separated row per example.
    /// Values use Rust's shortest round-trip formatting.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        for name in self.ids.iter().chain(&self.columns) {
            if name.is_empty() || name.contains(['\t', '\n', '\r']) {
                return Err(Error::Format(format!("unwritable name {name:?}")));
            }
        }
        writeln!(
            w,
            "{FEATURE_MAGIC}\tlayout={}\trows={}\tdim={}",
            self.layout_version,
            self.len(),
            self.dim()
        )?;
        writeln!(w, "id\tlabel\t{}", self.columns.join("\t"))?;
        let mut line = String::new();
        for ((id, row), label) in self.ids.iter().zip(&self.rows).zip(&self.labels) {
            line.clear();
            line.push_str(id);
            line.push('\t');
            line.push(if *label { '1' } else { '0' });
            for v in row {
                line.push('\t');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path.as_ref())?))
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Format("empty feature file".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 4 || fields[0] != FEATURE_MAGIC {
            return Err(Error::Format(format!("bad feature header {header:?}")));
        }
        let kv = |field: &str, key: &str| -> Result<usize> {
            field
                .strip_prefix(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad header field {field:?}")))
        };
        let version = kv(fields[1], "layout=")? as u32;
        if version != FEATURE_LAYOUT_VERSION {
            return Err(Error::LayoutVersion {
                expected: FEATURE_LAYOUT_VERSION,
                found: version,
            });
        }
        let n = kv(fields[2], "rows=")?;
        let dim = kv(fields[3], "dim=")?;

        let column_line = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Format("missing column record".into()))?;
        let cols: Vec<&str> = column_line.split('\t').collect();
        if cols.len() != dim + 2 || cols[0] != "id" || cols[1] != "label" {
            return Err(Error::Format(format!(
                "column record does not match dim={dim}: {column_line:?}"
            )));
        }
        let columns: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();

        let mut ids = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line_no = i + 3;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != dim + 2 {
                return Err(Error::Format(format!(
                    "line {line_no}: expected {} fields, found {}",
                    dim + 2,
                    parts.len()
                )));
            }
            let label = match parts[1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Format(format!(
                        "line {line_no}: bad label {other:?}"
                    )));
                }
            };
            let row = parts[2..]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Format(format!("line {line_no}: bad value {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            ids.push(parts[0].to_string());
            labels.push(label);
            rows.push(row);
        }
        if rows.len() != n {
            return Err(Error::Format(format!(
                "header promises {n} rows, file has {} (truncated?)",
                rows.len()
            )));
        }
        FeatureMatrix::new(ids, columns, rows, labels)
    }
}
