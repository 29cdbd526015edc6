//! Feature functions and the per-(mention, candidate) feature table.

mod strings;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxgeom::{self, BoxParams};
use crate::corpus::{CandidateEntity, Dataset, LabeledInstance, Mention};
use crate::error::{Error, Result};
use crate::logic::FeatureSource;

pub use strings::{char_jaccard, jaro_winkler, lev_sim, partial_ratio};

/// Min-max rescale to [0,1]. When all values are equal every output is 1.0.
pub fn minmax_rescale(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("min-max input {v}")));
    }
    Ok(boxgeom::rescale(values))
}

/// Summed partial-ratio similarity of the context mentions to each
/// candidate's description, rescaled over the candidate list.
pub fn context_scores(inst: &LabeledInstance, all_mentions: &HashMap<&str, &Mention>) -> Result<Vec<f64>> {
    let context = inst
        .mention
        .context_ids
        .iter()
        .map(|id| {
            all_mentions
                .get(id.as_str())
                .map(|m| m.surface.as_str())
                .ok_or_else(|| Error::UnknownContext(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = inst
        .candidates
        .iter()
        .map(|c| match &c.description {
            Some(desc) => context.iter().map(|m| partial_ratio(m, desc)).sum(),
            None => 0.0,
        })
        .collect();
    minmax_rescale(&raw)
}

pub fn context_score(
    inst: &LabeledInstance,
    candidate_index: usize,
    all_mentions: &HashMap<&str, &Mention>,
) -> Result<f64> {
    if candidate_index >= inst.candidates.len() {
        return Err(Error::Invalid(format!(
            "candidate index {candidate_index} out of range for `{}`",
            inst.mention.id
        )));
    }
    Ok(context_scores(inst, all_mentions)?[candidate_index])
}

/// 1 when the mention's type is one of the candidate's domains.
pub fn type_score(m: &Mention, e: &CandidateEntity) -> f64 {
    match &m.mention_type {
        Some(t) if e.domains.contains(t) => 1.0,
        _ => 0.0,
    }
}

/// In-degree prior, rescaled over the candidate list.
pub fn prominence_score(inst: &LabeledInstance) -> Vec<f64> {
    let degrees: Vec<f64> = inst.candidates.iter().map(|c| c.indegree as f64).collect();
    boxgeom::rescale(&degrees)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Jaccard,
    Levenshtein,
    JaroWinkler,
    PartialRatio,
    Context,
    Type,
    Prominence,
    /// Precomputed column from `external_scores`.
    External { column: String },
    /// Box-plus-cosine joint score; `cos_column` names the cosine source.
    Box {
        cos_column: Option<String>,
        params: Option<BoxParams<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    entries: Vec<(String, FeatureKind)>,
}

impl Default for FeatureCatalog {
    /// jacc, lev, jw, pr, ctx, type, prom, the spacy/blink/bert external
    /// columns, and the box feature fed by the bert column.
    fn default() -> Self {
        let ext = |c: &str| FeatureKind::External { column: c.to_string() };
        FeatureCatalog {
            entries: vec![
                ("jacc".into(), FeatureKind::Jaccard),
                ("lev".into(), FeatureKind::Levenshtein),
                ("jw".into(), FeatureKind::JaroWinkler),
                ("pr".into(), FeatureKind::PartialRatio),
                ("ctx".into(), FeatureKind::Context),
                ("type".into(), FeatureKind::Type),
                ("prom".into(), FeatureKind::Prominence),
                ("spacy".into(), ext("spacy")),
                ("blink".into(), ext("blink")),
                ("bert".into(), ext("bert")),
                (
                    "box".into(),
                    FeatureKind::Box {
                        cos_column: Some("bert".into()),
                        params: None,
                    },
                ),
            ],
        }
    }
}

impl FeatureCatalog {
    pub fn empty() -> Self {
        FeatureCatalog { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: FeatureKind) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::FeatureCollision(name));
        }
        self.entries.push((name, kind));
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, kind: FeatureKind) -> Result<Self> {
        self.insert(name, kind)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&FeatureKind> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, k)| k)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut FeatureKind> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, k)| k)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sub-catalog with only `names`, in the order given.
    pub fn restrict<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let mut out = FeatureCatalog::empty();
        for n in names {
            let n = n.as_ref();
            let kind = self
                .get(n)
                .ok_or_else(|| Error::Compile(format!("feature `{n}` is not in the catalog")))?;
            if out.get(n).is_none() {
                out.entries.push((n.to_string(), kind.clone()));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub mention_id: String,
    pub candidate_id: String,
    pub values: Vec<f64>,
}

/// Feature values keyed by (mention id, candidate id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    feature_names: Vec<String>,
    rows: Vec<FeatureRow>,
    index: HashMap<(String, String), usize>,
}

/// Borrowed view of one table row, usable as a graph input.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    names: &'a [String],
    values: &'a [f64],
}

impl<'a> RowView<'a> {
    pub fn values(&self) -> &'a [f64] {
        self.values
    }
}

impl FeatureSource for RowView<'_> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

impl FeatureTable {
    pub fn new(feature_names: Vec<String>) -> Self {
        FeatureTable {
            feature_names,
            ..FeatureTable::default()
        }
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: FeatureRow) -> Result<()> {
        if row.values.len() != self.feature_names.len() {
            return Err(Error::Invalid(format!(
                "row ({}, {}) has {} values for {} features",
                row.mention_id,
                row.candidate_id,
                row.values.len(),
                self.feature_names.len()
            )));
        }
        if let Some(v) = row.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!(
                "feature value {v} for ({}, {}) is outside [0,1]",
                row.mention_id, row.candidate_id
            )));
        }
        let key = (row.mention_id.clone(), row.candidate_id.clone());
        if self.index.contains_key(&key) {
            return Err(Error::Invalid(format!("duplicate row ({}, {})", key.0, key.1)));
        }
        self.index.insert(key, self.rows.len());
        self.rows.push(row);
        Ok(())
    }

    pub fn row(&self, mention_id: &str, candidate_id: &str) -> Option<RowView<'_>> {
        self.index
            .get(&(mention_id.to_string(), candidate_id.to_string()))
            .map(|&i| RowView {
                names: &self.feature_names,
                values: &self.rows[i].values,
            })
    }

    pub fn value(&self, mention_id: &str, candidate_id: &str, feature: &str) -> Option<f64> {
        self.row(mention_id, candidate_id)?.feature(feature)
    }

    /// Appends the rows of `other`, which must have identical columns.
    pub fn extend(&mut self, other: &FeatureTable) -> Result<()> {
        if other.feature_names != self.feature_names {
            return Err(Error::Invalid("feature tables have different columns".into()));
        }
        for r in &other.rows {
            self.push(r.clone())?;
        }
        Ok(())
    }

    /// Every (mention, candidate) of `ds` without a row.
    pub fn missing_rows(&self, ds: &Dataset) -> Vec<(String, String)> {
        ds.instances
            .iter()
            .flat_map(|i| i.candidates.iter().map(move |c| (i.mention.id.clone(), c.id.clone())))
            .filter(|k| !self.index.contains_key(k))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["mention_id".to_string(), "candidate_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.mention_id.clone(), r.candidate_id.clone()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "mention_id" || &header[1] != "candidate_id" {
            return Err(Error::Malformed {
                line: 1,
                message: "header must start with mention_id,candidate_id".into(),
            });
        }
        let mut table = FeatureTable::new(header.iter().skip(2).map(str::to_string).collect());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let values = rec
                .iter()
                .skip(2)
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::Malformed {
                        line,
                        message: format!("`{v}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            table
                .push(FeatureRow {
                    mention_id: rec[0].to_string(),
                    candidate_id: rec[1].to_string(),
                    values,
                })
                .map_err(|e| Error::Malformed {
                    line,
                    message: e.to_string(),
                })?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.write_csv(File::create(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_csv(File::open(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Evaluates one catalog feature for every candidate of `inst`.
fn feature_column(
    ds: &Dataset,
    inst: &LabeledInstance,
    name: &str,
    kind: &FeatureKind,
    mentions: &HashMap<&str, &Mention>,
    missing: &mut BTreeMap<String, usize>,
) -> Result<Vec<f64>> {
    let surface = inst.mention.surface.as_str();
    let per_name = |f: fn(&str, &str) -> f64| -> Vec<f64> {
        inst.candidates.iter().map(|c| f(surface, &c.name)).collect()
    };
    Ok(match kind {
        FeatureKind::Jaccard => per_name(char_jaccard),
        FeatureKind::Levenshtein => per_name(lev_sim),
        FeatureKind::JaroWinkler => per_name(jaro_winkler),
        FeatureKind::PartialRatio => per_name(partial_ratio),
        FeatureKind::Context => context_scores(inst, mentions)?,
        FeatureKind::Type => inst
            .candidates
            .iter()
            .map(|c| type_score(&inst.mention, c))
            .collect(),
        FeatureKind::Prominence => prominence_score(inst),
        FeatureKind::External { column } => inst
            .candidates
            .iter()
            .map(|c| match c.external_scores.get(column) {
                Some(&v) => v,
                None => {
                    *missing.entry(name.to_string()).or_default() += 1;
                    0.0
                }
            })
            .collect(),
        FeatureKind::Box { cos_column, params } => {
            let dim = ds.embedding_dim.ok_or_else(|| {
                Error::Invalid(format!("feature `{name}` needs embeddings, dataset `{}` has none", ds.name))
            })?;
            let params = params.clone().unwrap_or_else(|| BoxParams::identity(dim, 1.0));
            let cos = boxgeom::cos_column::<f64>(inst, cos_column.as_deref());
            let peers = boxgeom::peers_of(ds, inst);
            boxgeom::joint_box_feature(inst, &peers, &params, &cos)?
        }
    })
}

/// Evaluates every catalog feature on every (mention, candidate) pair.
/// Rows follow dataset order: mention, then candidate position.
pub fn build_feature_table(ds: &Dataset, catalog: &FeatureCatalog) -> Result<FeatureTable> {
    let names: Vec<String> = catalog.names().map(str::to_string).collect();
    let mentions = ds.mention_index();
    let mut missing = BTreeMap::new();
    let mut table = FeatureTable::new(names);
    for inst in &ds.instances {
        let columns = catalog
            .entries
            .iter()
            .map(|(name, kind)| feature_column(ds, inst, name, kind, &mentions, &mut missing))
            .collect::<Result<Vec<_>>>()?;
        for (j, c) in inst.candidates.iter().enumerate() {
            table.push(FeatureRow {
                mention_id: inst.mention.id.clone(),
                candidate_id: c.id.clone(),
                values: columns.iter().map(|col| col[j]).collect(),
            })?;
        }
    }
    for (name, n) in missing {
        log::warn!("feature `{name}`: {n} candidates lack the column, using 0.0");
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mention(id: &str, surface: &str, ctx: &[&str]) -> Mention {
        Mention {
            id: id.into(),
            surface: surface.into(),
            text_id: "q1".into(),
            context_ids: ctx.iter().map(|s| s.to_string()).collect(),
            mention_type: None,
        }
    }

    fn cand(id: &str, indegree: u64, desc: Option<&str>) -> CandidateEntity {
        let mut c = CandidateEntity::new(id, id);
        c.indegree = indegree;
        c.description = desc.map(str::to_string);
        c
    }

    /// The two-mention question of the running example.
    fn toy() -> Dataset {
        Dataset::new(
            "toy",
            vec![
                LabeledInstance {
                    mention: mention("m1", "Cameron", &["m2"]),
                    candidates: vec![cand("James_Cameron", 30, None), cand("Roderick_Cameron", 10, None)],
                    labels: vec![1, 0],
                },
                LabeledInstance {
                    mention: mention("m2", "Titanic", &["m1"]),
                    candidates: vec![cand("Titanic", 44, None), cand("Titanic_(1997_film)", 52, None)],
                    labels: vec![0, 1],
                },
            ],
        )
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_rescale(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_rescale(&[5.0, 5.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(minmax_rescale(&[0.3]).unwrap(), vec![1.0]);
        assert!(minmax_rescale(&[1.0, f64::NAN]).is_err());
        assert!(minmax_rescale(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn prominence_examples() {
        let ds = toy();
        assert_eq!(prominence_score(&ds.instances[0]), vec![1.0, 0.0]);
        assert_eq!(prominence_score(&ds.instances[1]), vec![0.0, 1.0]);
        let mut single = ds.instances[0].clone();
        single.candidates.truncate(1);
        assert_eq!(prominence_score(&single), vec![1.0]);
    }

    #[test]
    fn type_examples() {
        let mut m = mention("m", "x", &[]);
        let mut e = cand("e", 0, None);
        e.domains = ["Person".to_string(), "Agent".to_string()].into_iter().collect();
        assert_eq!(type_score(&m, &e), 0.0);
        m.mention_type = Some("Person".into());
        assert_eq!(type_score(&m, &e), 1.0);
        assert_eq!(type_score(&m, &cand("f", 0, None)), 0.0);
    }

    #[test]
    fn context_examples() {
        let ctx = mention("c", "Cameron", &[]);
        let inst = LabeledInstance {
            mention: mention("m", "Titanic", &["c"]),
            candidates: vec![
                cand("ship", 0, Some("ship")),
                cand("film", 0, Some("film directed by James Cameron")),
                cand("none", 0, None),
            ],
            labels: vec![0, 1, 0],
        };
        let index: HashMap<&str, &Mention> = [("c", &ctx)].into_iter().collect();
        // raw: pr("cameron","ship") = 0 (no shared letters in any window),
        // pr("cameron", desc) = 1 (exact window), missing desc = 0
        assert_eq!(partial_ratio("Cameron", "ship"), 0.0);
        assert_eq!(context_scores(&inst, &index).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(context_score(&inst, 1, &index).unwrap(), 1.0);

        let lonely = LabeledInstance {
            mention: mention("m", "Titanic", &[]),
            ..inst.clone()
        };
        assert_eq!(context_scores(&lonely, &index).unwrap(), vec![1.0, 1.0, 1.0]);

        let dangling = LabeledInstance {
            mention: mention("m", "Titanic", &["ghost"]),
            ..inst
        };
        assert!(matches!(context_scores(&dangling, &index), Err(Error::UnknownContext(id)) if id == "ghost"));
    }

    #[test]
    fn feature_table_on_running_example() {
        let catalog = FeatureCatalog::default().restrict(&["jacc", "prom"]).unwrap();
        let table = build_feature_table(&toy(), &catalog).unwrap();
        assert_eq!(table.len(), 4);
        let v = |m: &str, c: &str, f: &str| table.value(m, c, f).unwrap();
        assert!((v("m1", "James_Cameron", "jacc") - 0.7).abs() < 1e-12);
        assert!((v("m1", "Roderick_Cameron", "jacc") - 7.0 / 11.0).abs() < 1e-12);
        assert_eq!(v("m2", "Titanic", "jacc"), 1.0);
        assert!((v("m2", "Titanic_(1997_film)", "jacc") - 5.0 / 14.0).abs() < 1e-12);
        assert_eq!(v("m1", "James_Cameron", "prom"), 1.0);
        assert_eq!(v("m2", "Titanic", "prom"), 0.0);
    }

    #[test]
    fn empty_dataset_gives_empty_table() {
        let t = build_feature_table(&Dataset::default(), &FeatureCatalog::default()).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn external_columns_are_copied() {
        let mut ds = toy();
        for (i, inst) in ds.instances.iter_mut().enumerate() {
            for (j, c) in inst.candidates.iter_mut().enumerate() {
                c.external_scores.insert("blinkscore".into(), 0.1 * (i * 2 + j) as f64);
            }
        }
        let catalog = FeatureCatalog::empty()
            .with("blinkscore", FeatureKind::External { column: "blinkscore".into() })
            .unwrap();
        let table = build_feature_table(&ds, &catalog).unwrap();
        for inst in &ds.instances {
            for c in &inst.candidates {
                assert_eq!(
                    table.value(&inst.mention.id, &c.id, "blinkscore"),
                    Some(c.external_scores["blinkscore"])
                );
            }
        }
    }

    #[test]
    fn box_feature_without_embeddings_fails() {
        let catalog = FeatureCatalog::default().restrict(&["box"]).unwrap();
        assert!(build_feature_table(&toy(), &catalog).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let catalog = FeatureCatalog::default().restrict(&["jacc", "lev", "jw", "prom"]).unwrap();
        let table = build_feature_table(&toy(), &catalog).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = FeatureTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, table);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mention_id,candidate_id,jacc,lev,jw,prom\n"));
    }

    #[test]
    fn restrict_rejects_unknown_features() {
        assert!(FeatureCatalog::default().restrict(&["nope"]).is_err());
    }
}
