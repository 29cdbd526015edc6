//! Margin ranking loss, constraint penalties and the gradient descent loop.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::logic::{GraphDoc, ManualWeights, Mode, ParamKind, ScoringGraph};
use crate::scalar::Scalar;
use crate::simfeatures::{FeatureCatalog, FeatureTable, RowView};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Ranking margin `mu`.
    pub margin: f64,
    pub alpha: f64,
    pub penalty_lambda: f64,
    pub seed: u64,
    /// Hand-set weights, used only by the manual scorer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manual_weights: Option<ManualWeights>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-2,
            margin: 0.6,
            alpha: 0.7,
            penalty_lambda: 10.0,
            seed: 0,
            manual_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: String| if ok { Ok(()) } else { Err(Error::Invalid(what)) };
        check(
            (1e-5..=1e-1).contains(&self.learning_rate),
            format!("learning_rate {} outside [1e-5, 1e-1]", self.learning_rate),
        )?;
        check(
            (0.6..=0.95).contains(&self.margin),
            format!("margin {} outside [0.6, 0.95]", self.margin),
        )?;
        check(
            (0.5..1.0).contains(&self.alpha),
            format!("alpha {} outside [0.5, 1)", self.alpha),
        )?;
        check(
            self.penalty_lambda >= 0.0 && self.penalty_lambda.is_finite(),
            format!("penalty_lambda {} must be a non-negative number", self.penalty_lambda),
        )
    }

    /// Reads `key = value` lines; keys mirror the field names.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_kv_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Ranking loss plus weighted constraint penalty.
    pub loss: f64,
    pub ranking_loss: f64,
    pub residual_sum: f64,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {:>3}  loss {:.6}  ranking {:.6}  residuals {:.3e}",
            self.epoch, self.loss, self.ranking_loss, self.residual_sum
        )
    }
}

/// A fitted scoring graph with the configuration and catalog it was
/// trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub graph: ScoringGraph<T>,
    pub config: TrainConfig,
    pub catalog: FeatureCatalog,
    pub initial_loss: f64,
    pub training_log: Vec<EpochStats>,
}

/// On-disk form of a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub graph: GraphDoc,
    pub config: TrainConfig,
    pub catalog: FeatureCatalog,
    pub initial_loss: f64,
    pub training_log: Vec<EpochStats>,
}

impl<T: Scalar> Model<T> {
    /// Wraps an untrained graph.
    pub fn untrained(graph: ScoringGraph<T>, catalog: FeatureCatalog, config: TrainConfig) -> Self {
        Model { graph, config, catalog, initial_loss: f64::NAN, training_log: Vec::new() }
    }

    pub fn residual_sum(&self) -> T {
        self.graph.residual_sum()
    }

    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            graph: self.graph.to_doc(),
            config: self.config.clone(),
            catalog: self.catalog.clone(),
            initial_loss: self.initial_loss,
            training_log: self.training_log.clone(),
        }
    }

    pub fn from_doc(doc: &ModelDoc) -> Result<Self> {
        Ok(Model {
            graph: ScoringGraph::from_doc(&doc.graph)?,
            config: doc.config.clone(),
            catalog: doc.catalog.clone(),
            initial_loss: doc.initial_loss,
            training_log: doc.training_log.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_doc()).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(&serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// One mention's candidates as graph inputs.
pub(crate) struct Prepared<'a> {
    pub mention_id: &'a str,
    pub rows: Vec<RowView<'a>>,
    pub labels: &'a [u8],
}

/// Checks that `table` has every graph leaf and every dataset pair.
pub(crate) fn check_coverage(leaves: &[String], table: &FeatureTable) -> Result<()> {
    let missing: Vec<String> = leaves
        .iter()
        .filter(|l| !table.feature_names().contains(l))
        .cloned()
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::CatalogMismatch(missing))
    }
}

pub(crate) fn prepare<'a, T: Scalar>(
    graph: &ScoringGraph<T>,
    ds: &'a Dataset,
    table: &'a FeatureTable,
) -> Result<Vec<Prepared<'a>>> {
    check_coverage(&graph.features(), table)?;
    ds.instances
        .iter()
        .map(|inst| {
            let rows = inst
                .candidates
                .iter()
                .map(|c| {
                    table.row(&inst.mention.id, &c.id).ok_or_else(|| {
                        Error::Invalid(format!(
                            "feature table has no row for ({}, {})",
                            inst.mention.id, c.id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Prepared { mention_id: &inst.mention.id, rows, labels: &inst.labels })
        })
        .collect()
}

/// Loss and its derivative with respect to each score. Every positive is
/// paired with every negative; a hinge exactly at its kink contributes a
/// zero sub-gradient.
fn margin_terms<T: Scalar>(scores: &[T], labels: &[u8], mu: T) -> Result<(T, Vec<T>)> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if !labels.contains(&1) {
        return Err(Error::Invalid("instance has no positive candidate".into()));
    }
    let mut loss = T::zero();
    let mut d = vec![T::zero(); scores.len()];
    for (p, _) in labels.iter().enumerate().filter(|(_, &l)| l == 1) {
        for (n, _) in labels.iter().enumerate().filter(|(_, &l)| l == 0) {
            let h = mu - (scores[p] - scores[n]);
            if h > T::zero() {
                loss += h;
                d[p] -= T::one();
                d[n] += T::one();
            }
        }
    }
    Ok((loss, d))
}

/// `sum over positives p and negatives n of max(0, mu - (s_p - s_n))`.
pub fn margin_loss<T: Scalar>(scores: &[T], labels: &[u8], mu: T) -> Result<T> {
    margin_terms(scores, labels, mu).map(|(l, _)| l)
}

fn scores_of<T: Scalar>(graph: &ScoringGraph<T>, p: &Prepared<'_>) -> Result<Vec<T>> {
    p.rows.iter().map(|r| graph.evaluate(r)).collect()
}

fn ranking_loss<T: Scalar>(graph: &ScoringGraph<T>, prepared: &[Prepared<'_>], mu: T) -> Result<T> {
    let mut total = T::zero();
    for p in prepared {
        let l = margin_loss(&scores_of(graph, p)?, p.labels, mu)?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss of mention `{}`", p.mention_id)));
        }
        total += l;
    }
    Ok(total)
}

/// Ranking loss over all mentions plus `lambda` times the constraint
/// residual sum.
pub fn total_loss<T: Scalar>(
    graph: &ScoringGraph<T>,
    table: &FeatureTable,
    ds: &Dataset,
    config: &TrainConfig,
) -> Result<T> {
    let prepared = prepare(graph, ds, table)?;
    Ok(ranking_loss(graph, &prepared, T::of(config.margin))?
        + T::of(config.penalty_lambda) * graph.residual_sum())
}

fn mention_gradient<T: Scalar>(graph: &ScoringGraph<T>, p: &Prepared<'_>, mu: T, grad: &mut [T]) -> Result<T> {
    let scores = scores_of(graph, p)?;
    let (loss, d) = margin_terms(&scores, p.labels, mu)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss of mention `{}`", p.mention_id)));
    }
    for (row, up) in p.rows.iter().zip(d) {
        if up != T::zero() {
            graph.backward(row, up, grad)?;
        }
    }
    Ok(loss)
}

/// Exact gradient of [`total_loss`] with respect to the raw parameters, in
/// the order of [`ScoringGraph::parameters`].
pub fn gradients<T: Scalar>(
    graph: &ScoringGraph<T>,
    table: &FeatureTable,
    ds: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<T>> {
    let prepared = prepare(graph, ds, table)?;
    let mut grad = vec![T::zero(); graph.param_count()];
    let mu = T::of(config.margin);
    for p in &prepared {
        mention_gradient(graph, p, mu, &mut grad)?;
    }
    graph.residual_backward(T::of(config.penalty_lambda), &mut grad);
    Ok(grad)
}

/// Smallest distance of any hinge or clamp in the loss to its kink. Finite
/// differences are only meaningful when this exceeds the step size.
pub fn kink_distance<T: Scalar>(
    graph: &ScoringGraph<T>,
    table: &FeatureTable,
    ds: &Dataset,
    config: &TrainConfig,
) -> Result<T> {
    let prepared = prepare(graph, ds, table)?;
    let mu = T::of(config.margin);
    let mut best = graph.residual_kink_distance();
    for p in &prepared {
        for r in &p.rows {
            best = best.min(graph.kink_distance(r)?);
        }
        let s = scores_of(graph, p)?;
        for (i, _) in p.labels.iter().enumerate().filter(|(_, &l)| l == 1) {
            for (j, _) in p.labels.iter().enumerate().filter(|(_, &l)| l == 0) {
                best = best.min((mu - (s[i] - s[j])).abs());
            }
        }
    }
    Ok(best)
}

/// Which raw parameters move under `mode`.
pub fn trainable_mask(kinds: &[ParamKind], mode: Mode) -> Vec<bool> {
    kinds
        .iter()
        .map(|k| match mode {
            Mode::Lnn => *k != ParamKind::FixedGamma,
            Mode::Tnorm => *k == ParamKind::Gamma,
            Mode::Manual => false,
        })
        .collect()
}

/// Per-mention gradient descent over shuffled mentions. Each step follows
/// the gradient of that mention's ranking loss plus the weighted constraint
/// penalty.
pub fn train<T: Scalar>(
    ds: &Dataset,
    table: &FeatureTable,
    mut graph: ScoringGraph<T>,
    catalog: &FeatureCatalog,
    config: &TrainConfig,
) -> Result<Model<T>> {
    config.validate()?;
    if graph.mode == Mode::Manual {
        if let Some(mw) = &config.manual_weights {
            graph.apply_manual_weights(mw)?;
        }
    }
    let prepared = prepare(&graph, ds, table)?;
    let mu = T::of(config.margin);
    let lambda = T::of(config.penalty_lambda);
    let lr = T::of(config.learning_rate);
    let mask = trainable_mask(&graph.parameter_kinds(), graph.mode);
    let stats = |g: &ScoringGraph<T>, epoch: usize| -> Result<EpochStats> {
        let ranking = ranking_loss(g, &prepared, mu)?.as_f64();
        let residual_sum = g.residual_sum().as_f64();
        Ok(EpochStats {
            epoch,
            loss: ranking + config.penalty_lambda * residual_sum,
            ranking_loss: ranking,
            residual_sum,
        })
    };
    let initial = stats(&graph, 0)?;
    log::info!("initial loss {:.6}", initial.loss);
    let mut log_entries: Vec<EpochStats> = Vec::with_capacity(config.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut params = graph.parameters();
    let mut grad = vec![T::zero(); params.len()];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        if mask.iter().any(|&m| m) {
            for &i in &order {
                grad.iter_mut().for_each(|g| *g = T::zero());
                mention_gradient(&graph, &prepared[i], mu, &mut grad)?;
                graph.residual_backward(lambda, &mut grad);
                for ((p, g), &m) in params.iter_mut().zip(&grad).zip(&mask) {
                    if m {
                        *p -= lr * *g;
                    }
                }
                graph.set_parameters(&params)?;
            }
        }
        let s = stats(&graph, epoch)?;
        log::debug!("{s}");
        log_entries.push(s);
        if !s.loss.is_finite() || s.loss > DIVERGENCE_LIMIT || params.iter().any(|p| !p.is_finite()) {
            let trail: Vec<String> = log_entries.iter().map(|e| e.to_string()).collect();
            return Err(Error::Diverged(format!(
                "loss {} at epoch {epoch}\n{}",
                s.loss,
                trail.join("\n")
            )));
        }
    }
    if let Some(last) = log_entries.last() {
        log::info!("final loss {:.6}, constraint residual sum {:.3e}", last.loss, last.residual_sum);
    }
    Ok(Model {
        graph,
        config: config.clone(),
        catalog: catalog.clone(),
        initial_loss: initial.loss,
        training_log: log_entries,
    })
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchCell {
    pub margin: f64,
    pub learning_rate: f64,
    pub outcome: std::result::Result<f64, String>,
}

/// Trains one model per (margin, learning rate) pair and returns the
/// configuration with the best dev F1. Ties go to the lower learning rate,
/// then the lower margin.
#[allow(clippy::too_many_arguments)]
pub fn hyperparameter_search<T: Scalar>(
    train_ds: &Dataset,
    train_table: &FeatureTable,
    dev_ds: &Dataset,
    dev_table: &FeatureTable,
    graph: &ScoringGraph<T>,
    catalog: &FeatureCatalog,
    base: &TrainConfig,
    margins: &[f64],
    learning_rates: &[f64],
) -> Result<(TrainConfig, Vec<SearchCell>)> {
    if margins.is_empty() || learning_rates.is_empty() {
        return Err(Error::Invalid("empty hyperparameter grid".into()));
    }
    let mut lrs = learning_rates.to_vec();
    let mut mus = margins.to_vec();
    lrs.sort_by(f64::total_cmp);
    mus.sort_by(f64::total_cmp);
    let mut cells = Vec::new();
    let mut best: Option<(f64, TrainConfig)> = None;
    for &lr in &lrs {
        for &mu in &mus {
            let cfg = TrainConfig { learning_rate: lr, margin: mu, ..base.clone() };
            let outcome = cfg
                .validate()
                .and_then(|_| train(train_ds, train_table, graph.clone(), catalog, &cfg))
                .and_then(|m| crate::eval::evaluate(&m, dev_ds, dev_table, &[]))
                .map(|r| r.f1)
                .map_err(|e| e.to_string());
            if let Ok(f1) = outcome {
                if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                    best = Some((f1, cfg.clone()));
                }
            }
            cells.push(SearchCell { margin: mu, learning_rate: lr, outcome });
        }
    }
    match best {
        Some((_, cfg)) => Ok((cfg, cells)),
        None => {
            let failures: Vec<String> = cells
                .iter()
                .map(|c| {
                    format!(
                        "mu={} lr={}: {}",
                        c.margin,
                        c.learning_rate,
                        c.outcome.as_ref().err().map(String::as_str).unwrap_or("")
                    )
                })
                .collect();
            Err(Error::Diverged(format!("every configuration failed:\n{}", failures.join("\n"))))
        }
    }
}
