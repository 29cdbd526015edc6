//! Linking datasets: mentions, their candidate lists and link labels.
//!
//! Datasets are stored as JSONL, one [`LabeledInstance`] per line. Loading
//! drops instances that cannot contribute a ranking signal (no candidates, or
//! no positive label) and reports how many were dropped.

mod lookup;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lookup::{fetch_candidates, LookupClient, LookupConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub id: String,
    pub surface: String,
    pub text_id: String,
    #[serde(default)]
    pub context_ids: Vec<String>,
    #[serde(rename = "type", default)]
    pub mention_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub domains: BTreeSet<String>,
    #[serde(default)]
    pub indegree: u64,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub external_scores: BTreeMap<String, f64>,
}

impl CandidateEntity {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        CandidateEntity {
            id: id.into(),
            name: name.into(),
            description: None,
            domains: BTreeSet::new(),
            indegree: 0,
            embedding: None,
            external_scores: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub mention: Mention,
    pub candidates: Vec<CandidateEntity>,
    pub labels: Vec<u8>,
}

impl LabeledInstance {
    /// Indices of candidates labeled as links.
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(i, _)| i)
    }

    pub fn has_positive(&self) -> bool {
        self.labels.contains(&1)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub instances: Vec<LabeledInstance>,
    pub embedding_dim: Option<usize>,
    /// Every mention seen while loading, including those of dropped
    /// instances, so context features can still resolve them.
    pub context_pool: BTreeMap<String, Mention>,
}

/// Counts of instances removed while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub read: usize,
    pub dropped_empty_candidates: usize,
    pub dropped_all_negative: usize,
}

impl std::fmt::Display for LoadReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "read {}, dropped {} empty-candidate, dropped {} all-negative",
            self.read, self.dropped_empty_candidates, self.dropped_all_negative
        )
    }
}

impl Dataset {
    pub fn new(name: impl Into<String>, instances: Vec<LabeledInstance>) -> Self {
        let embedding_dim = instances
            .iter()
            .flat_map(|i| i.candidates.iter())
            .find_map(|c| c.embedding.as_ref().map(Vec::len));
        let context_pool = instances
            .iter()
            .map(|i| (i.mention.id.clone(), i.mention.clone()))
            .collect();
        Dataset {
            name: name.into(),
            instances,
            embedding_dim,
            context_pool,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// All known mentions by id: the context pool plus every retained instance.
    pub fn mention_index(&self) -> HashMap<&str, &Mention> {
        let mut index: HashMap<&str, &Mention> = self
            .context_pool
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .collect();
        for inst in &self.instances {
            index.insert(inst.mention.id.as_str(), &inst.mention);
        }
        index
    }

    pub fn instance(&self, mention_id: &str) -> Option<&LabeledInstance> {
        self.instances.iter().find(|i| i.mention.id == mention_id)
    }

    /// Seeded shuffle-and-split; the first dataset receives
    /// `round(len * (1 - test_fraction))` instances.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.instances.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((self.instances.len() as f64) * (1.0 - test_fraction)).round() as usize;
        let pick = |idx: &[usize], suffix: &str| Dataset {
            name: format!("{}-{}", self.name, suffix),
            instances: idx.iter().map(|&i| self.instances[i].clone()).collect(),
            embedding_dim: self.embedding_dim,
            context_pool: self.context_pool.clone(),
        };
        let (a, b) = order.split_at(n_train.min(order.len()));
        (pick(a, "train"), pick(b, "test"))
    }
}

fn malformed(line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        line,
        message: message.into(),
    }
}

fn check_instance(inst: &LabeledInstance, line: usize) -> Result<()> {
    let m = &inst.mention;
    if m.surface.is_empty() {
        return Err(malformed(line, format!("mention `{}` has an empty surface", m.id)));
    }
    if m.context_ids.iter().any(|c| c == &m.id) {
        return Err(malformed(line, format!("mention `{}` lists itself as context", m.id)));
    }
    if inst.labels.len() != inst.candidates.len() {
        return Err(malformed(
            line,
            format!(
                "{} labels for {} candidates",
                inst.labels.len(),
                inst.candidates.len()
            ),
        ));
    }
    if let Some(l) = inst.labels.iter().find(|&&l| l > 1) {
        return Err(malformed(line, format!("label {l} is not 0 or 1")));
    }
    let mut seen = HashSet::new();
    for c in &inst.candidates {
        if !seen.insert(c.id.as_str()) {
            return Err(malformed(line, format!("duplicate candidate `{}`", c.id)));
        }
        for (k, &v) in &c.external_scores {
            if !(0.0..=1.0).contains(&v) {
                return Err(malformed(
                    line,
                    format!("external score {k}={v} of `{}` is outside [0,1]", c.id),
                ));
            }
        }
        if let Some(e) = &c.embedding {
            if e.iter().any(|x| !x.is_finite()) {
                return Err(malformed(line, format!("non-finite embedding for `{}`", c.id)));
            }
        }
    }
    Ok(())
}

/// Parses JSONL instances from `reader`, applying the same filtering as
/// [`load_dataset`].
pub fn read_dataset<R: Read>(reader: R, name: &str) -> Result<(Dataset, LoadReport)> {
    let mut report = LoadReport::default();
    let mut ds = Dataset {
        name: name.to_string(),
        ..Dataset::default()
    };
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| malformed(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: LabeledInstance =
            serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
        check_instance(&inst, lineno)?;
        report.read += 1;
        if !ids.insert(inst.mention.id.clone()) {
            return Err(Error::DuplicateMention(inst.mention.id));
        }
        for c in &inst.candidates {
            if let Some(e) = &c.embedding {
                match ds.embedding_dim {
                    None => ds.embedding_dim = Some(e.len()),
                    Some(d) if d != e.len() => {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            found: e.len(),
                            context: format!("line {lineno}, candidate `{}`", c.id),
                        })
                    }
                    _ => {}
                }
            }
        }
        ds.context_pool
            .insert(inst.mention.id.clone(), inst.mention.clone());
        if inst.candidates.is_empty() {
            report.dropped_empty_candidates += 1;
        } else if !inst.has_positive() {
            report.dropped_all_negative += 1;
        } else {
            ds.instances.push(inst);
        }
    }
    Ok((ds, report))
}

/// Loads a JSONL dataset, dropping instances with an empty candidate list or
/// without any positive label.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (ds, report) = read_dataset(file, &name)?;
    log::info!("{}: {report}", path.display());
    Ok((ds, report))
}

/// Canonical JSONL encoding of the retained instances.
pub fn write_dataset<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for inst in &ds.instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, file)
}

/// Outcome counters of [`merge_external_scores`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MergeReport {
    pub matched: usize,
    pub unmatched_defaulted: usize,
    pub unknown_mentions: usize,
    pub unknown_candidates: usize,
    pub duplicate_keys: usize,
    pub rescaled_mentions: usize,
}

#[derive(Debug, Deserialize)]
struct ScoreRecord {
    mention_id: String,
    candidate_id: String,
    score: f64,
}

/// Reads a `mention_id,candidate_id,score` CSV. Duplicate keys keep the
/// last value; the number of duplicates is returned alongside.
pub fn read_scores<R: Read>(reader: R) -> Result<(HashMap<(String, String), f64>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut scores = HashMap::new();
    let mut duplicates = 0;
    for (i, rec) in rdr.deserialize::<ScoreRecord>().enumerate() {
        let rec = rec.map_err(|e| malformed(i + 2, e.to_string()))?;
        if !rec.score.is_finite() {
            return Err(malformed(i + 2, format!("non-finite score {}", rec.score)));
        }
        if scores
            .insert((rec.mention_id, rec.candidate_id), rec.score)
            .is_some()
        {
            duplicates += 1;
        }
    }
    Ok((scores, duplicates))
}

/// Attaches a precomputed score column to every candidate.
///
/// Unmatched candidates default to 0.0. When a mention's column leaves
/// [0,1], that mention's values are min-max rescaled.
pub fn merge_scores(
    mut ds: Dataset,
    scores: &HashMap<(String, String), f64>,
    feature_name: &str,
) -> Result<(Dataset, MergeReport)> {
    let mut report = MergeReport::default();
    for inst in &ds.instances {
        if inst
            .candidates
            .iter()
            .any(|c| c.external_scores.contains_key(feature_name))
        {
            return Err(Error::FeatureCollision(feature_name.to_string()));
        }
    }
    let known: HashSet<&str> = ds.instances.iter().map(|i| i.mention.id.as_str()).collect();
    let mut known_pairs = HashSet::new();
    for inst in &ds.instances {
        for c in &inst.candidates {
            known_pairs.insert((inst.mention.id.as_str(), c.id.as_str()));
        }
    }
    for (m, c) in scores.keys() {
        if !known.contains(m.as_str()) {
            report.unknown_mentions += 1;
        } else if !known_pairs.contains(&(m.as_str(), c.as_str())) {
            report.unknown_candidates += 1;
        }
    }
    if report.unknown_mentions > 0 {
        log::warn!(
            "{}: {} score rows name unknown mentions",
            feature_name,
            report.unknown_mentions
        );
    }

    for inst in &mut ds.instances {
        let mut column: Vec<f64> = Vec::with_capacity(inst.candidates.len());
        for c in &inst.candidates {
            match scores.get(&(inst.mention.id.clone(), c.id.clone())) {
                Some(&v) => {
                    report.matched += 1;
                    column.push(v);
                }
                None => {
                    report.unmatched_defaulted += 1;
                    column.push(0.0);
                }
            }
        }
        if column.iter().any(|v| !(0.0..=1.0).contains(v)) {
            column = crate::simfeatures::minmax_rescale(&column)?;
            report.rescaled_mentions += 1;
        }
        for (c, v) in inst.candidates.iter_mut().zip(column) {
            c.external_scores.insert(feature_name.to_string(), v);
        }
    }
    Ok((ds, report))
}

/// File-based form of [`merge_scores`].
pub fn merge_external_scores(
    ds: Dataset,
    scores_path: impl AsRef<Path>,
    feature_name: &str,
) -> Result<(Dataset, MergeReport)> {
    let path = scores_path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (scores, duplicates) = read_scores(file)?;
    if duplicates > 0 {
        log::warn!(
            "{}: {duplicates} duplicate keys, last value kept",
            path.display()
        );
    }
    let (ds, mut report) = merge_scores(ds, &scores, feature_name)?;
    report.duplicate_keys = duplicates;
    Ok((ds, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub mention_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub candidates: usize,
    pub description: f64,
    pub embedding: f64,
    pub external: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub coverage: Coverage,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks dataset invariants without modifying anything.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    let mut flag = |id: Option<&str>, message: String| {
        violations.push(Violation {
            mention_id: id.map(str::to_string),
            message,
        })
    };

    let mut ids = HashSet::new();
    let mut n_cand = 0usize;
    let mut n_desc = 0usize;
    let mut n_emb = 0usize;
    let mut ext_counts: BTreeMap<String, usize> = BTreeMap::new();
    for inst in &ds.instances {
        let id = inst.mention.id.as_str();
        if !ids.insert(id) {
            flag(Some(id), "duplicate mention id".into());
        }
        if inst.mention.surface.is_empty() {
            flag(Some(id), "empty surface".into());
        }
        if inst.mention.context_ids.iter().any(|c| c == id) {
            flag(Some(id), "context lists the mention itself".into());
        }
        if inst.labels.len() != inst.candidates.len() {
            flag(
                Some(id),
                format!(
                    "{} labels for {} candidates",
                    inst.labels.len(),
                    inst.candidates.len()
                ),
            );
        }
        if inst.candidates.is_empty() {
            flag(Some(id), "no candidates".into());
        }
        if !inst.has_positive() {
            flag(Some(id), "no positive label".into());
        }
        if inst.labels.iter().any(|&l| l > 1) {
            flag(Some(id), "label outside {0,1}".into());
        }
        for c in &inst.candidates {
            n_cand += 1;
            if c.description.is_some() {
                n_desc += 1;
            }
            if let Some(e) = &c.embedding {
                n_emb += 1;
                if let Some(d) = ds.embedding_dim {
                    if e.len() != d {
                        flag(
                            Some(id),
                            format!("candidate `{}` embedding has dimension {}, expected {d}", c.id, e.len()),
                        );
                    }
                }
            }
            for (k, &v) in &c.external_scores {
                *ext_counts.entry(k.clone()).or_default() += 1;
                if !(0.0..=1.0).contains(&v) {
                    flag(Some(id), format!("candidate `{}` score {k}={v} outside [0,1]", c.id));
                }
            }
        }
    }
    let frac = |n: usize| if n_cand == 0 { 1.0 } else { n as f64 / n_cand as f64 };
    ValidationReport {
        violations,
        coverage: Coverage {
            candidates: n_cand,
            description: frac(n_desc),
            embedding: frac(n_emb),
            external: ext_counts.into_iter().map(|(k, n)| (k, frac(n))).collect(),
        },
    }
}
