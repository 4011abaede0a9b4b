//! NLI scoring contract and its two in-process implementations.
//!
//! Real transformer scores never run in-process: an external exporter writes
//! them to a `#halt-nli-v1` score file, which [`LookupBackend`] serves. The
//! [`SyntheticBackend`] computes a cheap overlap-driven distribution so the
//! pipeline can run end to end without any model.
//!
//! Score file layout (UTF-8, LF):
//!
//! ```text
//! #halt-nli-v1 <backend name> <backend version>
//! <id>\t<premise window>\t<hypothesis window>\t<entail>\t<neutral>\t<contradict>
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledExample;
use crate::features::{default_windows, example_tokens, jaccard, NliDistribution};
use crate::seed::hash_tokens;
use crate::{Error, Result};

pub const SCORE_FILE_MAGIC: &str = "#halt-nli-v1";

/// Sums within this distance of 1 are renormalised on load; anything further
/// is rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-4;
const EXACT_SUM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendId {
    pub name: String,
    pub version: String,
}

impl BackendId {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
        }
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScoreKey {
    pub example_id: String,
    pub premise_window: usize,
    pub hypothesis_window: usize,
}

impl fmt::Display for ScoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "example '{}' (premise window {}, hypothesis window {})",
            self.example_id, self.premise_window, self.hypothesis_window
        )
    }
}

/// One premise/hypothesis window pair handed to a backend.
#[derive(Debug, Clone, Copy)]
pub struct WindowPair<'a> {
    pub example_id: &'a str,
    pub premise_index: usize,
    pub hypothesis_index: usize,
    pub premise: &'a [String],
    pub hypothesis: &'a [String],
}

impl WindowPair<'_> {
    pub fn key(&self) -> ScoreKey {
        ScoreKey {
            example_id: self.example_id.to_string(),
            premise_window: self.premise_index,
            hypothesis_window: self.hypothesis_index,
        }
    }
}

/// A frozen NLI model. `score` must be deterministic and callable from many
/// threads at once.
pub trait NliBackend: Send + Sync {
    fn id(&self) -> &BackendId;

    fn score(&self, pair: &WindowPair<'_>) -> Result<NliDistribution>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub backend: BackendId,
    entries: BTreeMap<ScoreKey, NliDistribution>,
}

impl ScoreTable {
    pub fn new(backend: BackendId) -> Self {
        Self {
            backend,
            entries: BTreeMap::new(),
        }
    }

    /// Insert a record; duplicate keys are rejected.
    pub fn insert(&mut self, key: ScoreKey, dist: NliDistribution) -> Result<()> {
        if self.entries.contains_key(&key) {
            return Err(Error::Format(format!("duplicate score key {key}")));
        }
        self.entries.insert(key, dist);
        Ok(())
    }

    pub fn get(&self, key: &ScoreKey) -> Option<&NliDistribution> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ScoreKey> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ScoreKey, &NliDistribution)> {
        self.entries.iter()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut table: Option<ScoreTable> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() {
                continue;
            }
            let Some(table) = table.as_mut() else {
                table = Some(ScoreTable::new(parse_header(line, line_no)?));
                continue;
            };
            let (key, dist) = parse_record(line, line_no)?;
            if table.entries.contains_key(&key) {
                return Err(Error::Validation {
                    line: line_no,
                    message: format!("duplicate key {key}"),
                });
            }
            table.entries.insert(key, dist);
        }
        table.ok_or_else(|| Error::Format("score file is empty (no header)".into()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Records are written in key order with 17 significant digits, which
    /// round-trips every f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{SCORE_FILE_MAGIC} {} {}",
            self.backend.name, self.backend.version
        )?;
        for (k, d) in &self.entries {
            writeln!(
                w,
                "{}\t{}\t{}\t{:.16e}\t{:.16e}\t{:.16e}",
                k.example_id,
                k.premise_window,
                k.hypothesis_window,
                d.entail,
                d.neutral,
                d.contradict
            )?;
        }
        Ok(())
    }
}

fn parse_header(line: &str, line_no: usize) -> Result<BackendId> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(SCORE_FILE_MAGIC) {
        return Err(Error::Format(format!(
            "line {line_no}: expected '{SCORE_FILE_MAGIC} <name> <version>' header"
        )));
    }
    match (parts.next(), parts.next(), parts.next()) {
        (Some(name), Some(version), None) => Ok(BackendId::new(name, version)),
        _ => Err(Error::Format(format!(
            "line {line_no}: header must name exactly a backend and a version"
        ))),
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<(ScoreKey, NliDistribution)> {
    let fields: Vec<&str> = line.split('\t').collect();
    let malformed = |what: String| Error::Format(format!("line {line_no}: {what}"));
    if fields.len() != 6 {
        return Err(malformed(format!(
            "expected 6 tab-separated fields, found {}",
            fields.len()
        )));
    }
    if fields[0].is_empty() {
        return Err(malformed("empty example id".into()));
    }
    let index = |s: &str, name: &str| {
        s.parse::<usize>()
            .map_err(|_| malformed(format!("{name} '{s}' is not a window index")))
    };
    let prob = |s: &str, name: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| malformed(format!("{name} '{s}' is not a number")))
    };
    let key = ScoreKey {
        example_id: fields[0].to_string(),
        premise_window: index(fields[1], "premise window")?,
        hypothesis_window: index(fields[2], "hypothesis window")?,
    };
    let raw = [
        prob(fields[3], "entail")?,
        prob(fields[4], "neutral")?,
        prob(fields[5], "contradict")?,
    ];
    let invalid = |message: String| Error::Validation {
        line: line_no,
        message,
    };
    if raw.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(invalid(format!(
            "components {raw:?} must be finite and nonnegative"
        )));
    }
    let sum: f64 = raw.iter().sum();
    if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
        return Err(invalid(format!("components sum to {sum}")));
    }
    // Values that already sum to one up to rounding are kept as written, so
    // tables this crate saves read back bit-for-bit.
    let dist = if (sum - 1.0).abs() <= EXACT_SUM_SLACK {
        NliDistribution::new(raw[0], raw[1], raw[2])
    } else {
        NliDistribution::normalized(raw[0], raw[1], raw[2])
    }
    .map_err(|e| invalid(e.to_string()))?;
    Ok((key, dist))
}

/// Serves precomputed scores from a [`ScoreTable`].
#[derive(Debug, Clone)]
pub struct LookupBackend {
    table: ScoreTable,
}

impl LookupBackend {
    pub fn new(table: ScoreTable) -> Self {
        Self { table }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ScoreTable::load(path).map(Self::new)
    }

    pub fn table(&self) -> &ScoreTable {
        &self.table
    }
}

impl NliBackend for LookupBackend {
    fn id(&self) -> &BackendId {
        &self.table.backend
    }

    fn score(&self, pair: &WindowPair<'_>) -> Result<NliDistribution> {
        let key = pair.key();
        self.table
            .get(&key)
            .copied()
            .ok_or(Error::MissingScore(key))
    }
}

/// Model-free scorer driven by lexical overlap.
///
/// - entail = clamp(1.2 * jaccard, 0.02, 0.96) + noise, noise in [0, 0.02)
/// - contradict = (1 - entail) * 0.9 * (1 - exp(-0.5 * novel)), where
///   `novel` counts hypothesis tokens absent from the premise
/// - neutral takes the remainder
///
/// The noise is a function of the seed and the two token lists only.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    id: BackendId,
    seed: u64,
}

impl SyntheticBackend {
    pub const NOISE: f64 = 0.02;

    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        Self {
            id: BackendId::new(name, format!("synthetic-{seed}")),
            seed,
        }
    }

    pub fn score_tokens(&self, premise: &[String], hypothesis: &[String]) -> NliDistribution {
        let overlap = jaccard(premise, hypothesis).unwrap_or(0.0);
        let state = hash_tokens(hash_tokens(self.seed, premise), hypothesis);
        let noise = ChaCha8Rng::seed_from_u64(state).random::<f64>() * Self::NOISE;
        let entail = (1.2 * overlap).clamp(0.02, 0.96) + noise;

        let premise_set: HashSet<&str> = premise.iter().map(String::as_str).collect();
        let novel = hypothesis
            .iter()
            .filter(|t| !premise_set.contains(t.as_str()))
            .count() as f64;
        let contradict = (1.0 - entail) * 0.9 * (1.0 - (-0.5 * novel).exp());
        let neutral = (1.0 - entail - contradict).max(0.0);
        NliDistribution::normalized(entail, neutral, contradict)
            .expect("synthetic masses are positive and finite")
    }
}

impl NliBackend for SyntheticBackend {
    fn id(&self) -> &BackendId {
        &self.id
    }

    fn score(&self, pair: &WindowPair<'_>) -> Result<NliDistribution> {
        Ok(self.score_tokens(pair.premise, pair.hypothesis))
    }
}

/// Every key the feature extractor will request for `examples`, in order.
/// A complete score file must cover exactly this set.
pub fn required_score_keys(examples: &[LabeledExample]) -> Result<Vec<ScoreKey>> {
    let mut keys = Vec::new();
    for ex in examples {
        let (source, hypothesis, _) = example_tokens(ex);
        let pw = default_windows(source.len())?.len();
        let hw = default_windows(hypothesis.len())?.len();
        for p in 0..pw {
            for h in 0..hw {
                keys.push(ScoreKey {
                    example_id: ex.id.clone(),
                    premise_window: p,
                    hypothesis_window: h,
                });
            }
        }
    }
    Ok(keys)
}
