//! Inference, ranking metrics, transfer and ablation runs, weight export.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::logic::{GraphDoc, Mode, NodeDoc};
use crate::ruledsl::{compile, TemplateLibrary};
use crate::scalar::Scalar;
use crate::simfeatures::{FeatureCatalog, FeatureTable};
use crate::training::{prepare, train, Model, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mention_id: String,
    /// Candidates by descending score; ties keep candidate list order.
    pub ranked: Vec<(String, f64)>,
}

impl Prediction {
    pub fn top(&self) -> Option<&str> {
        self.ranked.first().map(|(c, _)| c.as_str())
    }
}

/// Stable descending sort of `(candidate, score)` pairs.
pub fn rank(scored: Vec<(String, f64)>) -> Vec<(String, f64)> {
    let mut v = scored;
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    v
}

/// Scores and ranks every candidate of every mention.
pub fn link<T: Scalar>(model: &Model<T>, ds: &Dataset, table: &FeatureTable) -> Result<Vec<Prediction>> {
    link_with_jobs(model, ds, table, 1)
}

/// [`link`] spread over up to `jobs` threads; output stays in dataset order.
pub fn link_with_jobs<T: Scalar>(
    model: &Model<T>,
    ds: &Dataset,
    table: &FeatureTable,
    jobs: usize,
) -> Result<Vec<Prediction>> {
    let prepared = prepare(&model.graph, ds, table)?;
    let chunk = prepared.len().div_ceil(jobs.max(1)).max(1);
    let graph = &model.graph;
    let chunks: Vec<Result<Vec<Prediction>>> = std::thread::scope(|s| {
        let handles: Vec<_> = prepared
            .chunks(chunk)
            .zip(ds.instances.chunks(chunk))
            .map(|(ps, insts)| {
                s.spawn(move || {
                    ps.iter()
                        .zip(insts)
                        .map(|(p, inst)| {
                            let scored = p
                                .rows
                                .iter()
                                .zip(&inst.candidates)
                                .map(|(r, c)| Ok((c.id.clone(), graph.evaluate(r)?.as_f64())))
                                .collect::<Result<Vec<_>>>()?;
                            Ok(Prediction { mention_id: inst.mention.id.clone(), ranked: rank(scored) })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("linking thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(ds.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub per_mention: Vec<(String, bool)>,
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn gold_sets(ds: &Dataset) -> HashMap<&str, Vec<&str>> {
    ds.instances
        .iter()
        .map(|i| {
            let gold = i.positives().map(|j| i.candidates[j].id.as_str()).collect();
            (i.mention.id.as_str(), gold)
        })
        .collect()
}

/// Per-prediction correctness: the top candidate is labeled positive.
fn correctness(preds: &[Prediction], ds: &Dataset) -> Vec<(String, bool)> {
    let gold = gold_sets(ds);
    preds
        .iter()
        .map(|p| {
            let ok = match (p.top(), gold.get(p.mention_id.as_str())) {
                (Some(top), Some(g)) => g.contains(&top),
                _ => false,
            };
            (p.mention_id.clone(), ok)
        })
        .collect()
}

/// Precision over predictions made, recall over dataset mentions, and
/// their harmonic mean.
pub fn prf1(preds: &[Prediction], ds: &Dataset) -> (f64, f64, f64) {
    let correct = correctness(preds, ds).iter().filter(|(_, ok)| *ok).count() as f64;
    let p = if preds.is_empty() { 0.0 } else { correct / preds.len() as f64 };
    let r = if ds.is_empty() { 0.0 } else { correct / ds.len() as f64 };
    (p, r, harmonic_mean(p, r))
}

/// Fraction of dataset mentions with a positive candidate in the top `k`.
pub fn recall_at_k(preds: &[Prediction], ds: &Dataset, ks: &[usize]) -> BTreeMap<usize, f64> {
    let gold = gold_sets(ds);
    ks.iter()
        .map(|&k| {
            let hits = preds
                .iter()
                .filter(|p| {
                    gold.get(p.mention_id.as_str())
                        .is_some_and(|g| p.ranked.iter().take(k).any(|(c, _)| g.contains(&c.as_str())))
                })
                .count();
            let r = if ds.is_empty() { 0.0 } else { hits as f64 / ds.len() as f64 };
            (k, r)
        })
        .collect()
}

impl EvalReport {
    pub fn from_predictions(preds: &[Prediction], ds: &Dataset, ks: &[usize]) -> Self {
        let (precision, recall, f1) = prf1(preds, ds);
        EvalReport {
            precision,
            recall,
            f1,
            recall_at: recall_at_k(preds, ds, ks),
            per_mention: correctness(preds, ds),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Two columns, `metric,value`: precision, recall, f1, then one
    /// `recall@k` row per cutoff.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        for (name, v) in [("precision", self.precision), ("recall", self.recall), ("f1", self.f1)] {
            w.write_record([name.to_string(), v.to_string()])?;
        }
        for (k, v) in &self.recall_at {
            w.write_record([format!("recall@{k}"), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &Dataset, table: &FeatureTable, ks: &[usize]) -> Result<EvalReport> {
    Ok(EvalReport::from_predictions(&link(model, ds, table)?, ds, ks))
}

/// Evaluates a frozen model on another dataset. The table must carry every
/// feature of the model's catalog that the graph reads.
pub fn transfer_eval<T: Scalar>(
    model: &Model<T>,
    ds: &Dataset,
    table: &FeatureTable,
    ks: &[usize],
) -> Result<EvalReport> {
    let missing: Vec<String> = model
        .graph
        .features()
        .into_iter()
        .filter(|f| model.catalog.get(f).is_none() || !table.feature_names().contains(f))
        .collect();
    if !missing.is_empty() {
        return Err(Error::CatalogMismatch(missing));
    }
    evaluate(model, ds, table, ks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub templates: Vec<String>,
    pub report: EvalReport,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("templates,precision,recall,f1,final_loss\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.templates.join("+"),
                r.report.precision,
                r.report.recall,
                r.report.f1,
                r.final_loss
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| templates | precision | recall | F1 |\n|---|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {:.4} | {:.4} |",
                r.templates.join(" + "),
                r.report.precision,
                r.report.recall,
                r.report.f1
            );
        }
        out
    }
}

/// Trains one model per template subset under the same configuration and
/// evaluates each on the test split.
#[allow(clippy::too_many_arguments)]
pub fn ablation<T: Scalar>(
    train_ds: &Dataset,
    train_table: &FeatureTable,
    test_ds: &Dataset,
    test_table: &FeatureTable,
    library: &TemplateLibrary,
    subsets: &[Vec<String>],
    catalog: &FeatureCatalog,
    mode: Mode,
    config: &TrainConfig,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let names: Vec<&str> = subset.iter().map(String::as_str).collect();
        let (program, root) = library.union(&names)?;
        let graph = compile(&program, catalog, mode, T::of(config.alpha), Some(&root))?;
        let model = train(train_ds, train_table, graph, catalog, config)?;
        let report = evaluate(&model, test_ds, test_table, &[])?;
        log::info!("ablation {}: F1 {:.4}", subset.join("+"), report.f1);
        rows.push(AblationRow {
            templates: subset.clone(),
            report,
            final_loss: model.training_log.last().map_or(model.initial_loss, |s| s.loss),
        });
    }
    Ok(AblationTable { rows })
}

/// The weight tree of a model: operator kinds, effective edge weights,
/// biases and leaf thresholds.
pub fn export_weights<T: Scalar>(model: &Model<T>) -> GraphDoc {
    model.graph.to_doc()
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering of a weight tree; edges into gates carry the
/// effective input weights.
pub fn weights_to_dot(doc: &GraphDoc) -> String {
    fn node(d: &NodeDoc, next: &mut usize, out: &mut String) -> usize {
        let id = *next;
        *next += 1;
        let label = match d.kind.as_str() {
            "and" | "or" => format!(
                "{}\\nbeta={:.2}",
                if d.kind == "and" { "AND" } else { "OR" },
                d.beta.unwrap_or(f64::NAN)
            ),
            "not" => "NOT".to_string(),
            "threshold" => format!(
                "{} > {:.2}",
                dot_escape(d.feature.as_deref().unwrap_or("?")),
                d.theta.unwrap_or(f64::NAN)
            ),
            _ => dot_escape(d.feature.as_deref().unwrap_or("?")),
        };
        let shape = if d.children.is_empty() { "box" } else { "ellipse" };
        let _ = writeln!(out, "  n{id} [label=\"{label}\", shape={shape}];");
        for (i, c) in d.children.iter().enumerate() {
            let cid = node(c, next, out);
            match d.weights.as_ref().and_then(|w| w.get(i)) {
                Some(w) => {
                    let _ = writeln!(out, "  n{id} -> n{cid} [label=\"{w:.2}\"];");
                }
                None => {
                    let _ = writeln!(out, "  n{id} -> n{cid};");
                }
            }
        }
        id
    }
    let mut out = format!("digraph weights {{\n  label=\"mode={} alpha={}\";\n", doc.mode, doc.alpha);
    let mut next = 0;
    node(&doc.root, &mut next, &mut out);
    out.push_str("}\n");
    out
}
