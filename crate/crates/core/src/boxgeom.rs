//! Box embeddings for joint disambiguation of co-occurring mentions.
//!
//! A mention is represented by the smallest axis-aligned box containing its
//! candidates' embeddings. A learned neighborhood projection (center shift
//! `psi`, side growth `omega`) maps a peer mention's box onto the region
//! where entities related to it live; candidates close to the center of the
//! intersection with the mention's own box receive a high score.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidateEntity, Dataset, LabeledInstance};
use crate::error::{Error, Result};
use crate::scalar::{inv_softplus, sigmoid, softplus, Scalar};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Hyperbox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(dim_err(lower.len(), upper.len(), "box corners"));
        }
        Ok(Hyperbox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// True when some side has negative length.
    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l > u)
    }

    pub fn center(&self) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| (l + u) * T::half())
            .collect()
    }

    pub fn half_width(&self) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| (u - l) * T::half())
            .collect()
    }

    pub fn contains(&self, point: &[T]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(p, (l, u))| l <= p && p <= u)
    }
}

/// Learned neighborhood relation and the box/cosine mixing weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxParams<T> {
    pub psi: Vec<T>,
    pub omega: Vec<T>,
    pub beta_box: T,
}

impl<T: Scalar> BoxParams<T> {
    /// Identity projection: no shift, no growth.
    pub fn identity(dim: usize, beta_box: T) -> Self {
        BoxParams {
            psi: vec![T::zero(); dim],
            omega: vec![T::zero(); dim],
            beta_box,
        }
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    fn check(&self) -> Result<()> {
        if self.omega.len() != self.psi.len() {
            return Err(dim_err(self.psi.len(), self.omega.len(), "omega"));
        }
        if self.omega.iter().any(|&w| w < T::zero()) || !self.beta_box.is_finite() || self.beta_box < T::zero() {
            return Err(Error::Invalid("box params need omega >= 0 and finite beta_box >= 0".into()));
        }
        Ok(())
    }
}

fn dim_err(expected: usize, found: usize, context: &str) -> Error {
    Error::DimensionMismatch {
        expected,
        found,
        context: context.to_string(),
    }
}

/// Smallest box containing every point.
pub fn box_of<T: Scalar, P: AsRef<[T]>>(points: &[P]) -> Result<Hyperbox<T>> {
    let first = points
        .first()
        .ok_or_else(|| Error::Invalid("cannot box an empty point set".into()))?
        .as_ref();
    let mut lower = first.to_vec();
    let mut upper = first.to_vec();
    for p in &points[1..] {
        let p = p.as_ref();
        if p.len() != lower.len() {
            return Err(dim_err(lower.len(), p.len(), "box_of"));
        }
        for (k, &x) in p.iter().enumerate() {
            lower[k] = lower[k].min(x);
            upper[k] = upper[k].max(x);
        }
    }
    Ok(Hyperbox { lower, upper })
}

/// Shifts the center by `psi` and grows every side by `omega`.
pub fn neighborhood<T: Scalar>(b: &Hyperbox<T>, p: &BoxParams<T>) -> Result<Hyperbox<T>> {
    if p.dim() != b.dim() || p.omega.len() != b.dim() {
        return Err(dim_err(b.dim(), p.dim(), "neighborhood"));
    }
    let center = b.center();
    let half = b.half_width();
    let mut lower = Vec::with_capacity(b.dim());
    let mut upper = Vec::with_capacity(b.dim());
    for k in 0..b.dim() {
        let c = center[k] + p.psi[k];
        let h = half[k] + p.omega[k] * T::half();
        lower.push(c - h);
        upper.push(c + h);
    }
    Ok(Hyperbox { lower, upper })
}

/// Component-wise intersection; `None` when the boxes do not overlap.
pub fn intersect<T: Scalar>(a: &Hyperbox<T>, b: &Hyperbox<T>) -> Result<Option<Hyperbox<T>>> {
    if a.dim() != b.dim() {
        return Err(dim_err(a.dim(), b.dim(), "intersect"));
    }
    let out = Hyperbox {
        lower: a.lower.iter().zip(&b.lower).map(|(&x, &y)| x.max(y)).collect(),
        upper: a.upper.iter().zip(&b.upper).map(|(&x, &y)| x.min(y)).collect(),
    };
    Ok(if out.is_empty() { None } else { Some(out) })
}

/// `1 / (1 + |e - center(b)|_1)`; zero for an empty box.
pub fn box_similarity<T: Scalar>(e: &[T], b: &Hyperbox<T>) -> Result<T> {
    if e.len() != b.dim() {
        return Err(dim_err(b.dim(), e.len(), "box_similarity"));
    }
    if b.is_empty() {
        return Ok(T::zero());
    }
    let dist = e
        .iter()
        .zip(b.center())
        .fold(T::zero(), |acc, (&x, c)| acc + (x - c).abs());
    Ok(T::one() / (T::one() + dist))
}

fn embeddings<T: Scalar>(cands: &[CandidateEntity]) -> Result<Vec<Vec<T>>> {
    cands
        .iter()
        .map(|c| {
            c.embedding
                .as_ref()
                .map(|e| e.iter().map(|&x| T::of(x)).collect())
                .ok_or_else(|| Error::Invalid(format!("candidate `{}` has no embedding", c.id)))
        })
        .collect()
}

/// Generic min-max rescale with the degenerate case mapped to 1.0.
pub(crate) fn rescale<T: Scalar>(values: &[T]) -> Vec<T> {
    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    if hi > lo {
        values.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![T::one(); values.len()]
    }
}

/// The region a mention's gold entity is expected in: its own box
/// intersected with the projected neighborhood of every peer box.
fn joint_region<T: Scalar>(
    own: &Hyperbox<T>,
    peer_boxes: &[Hyperbox<T>],
    p: &BoxParams<T>,
) -> Result<Option<Hyperbox<T>>> {
    let mut region = own.clone();
    for pb in peer_boxes {
        match intersect(&region, &neighborhood(pb, p)?)? {
            Some(r) => region = r,
            None => return Ok(None),
        }
    }
    Ok(Some(region))
}

/// `beta_box * Sim_box + Sim_cos` per candidate, before rescaling.
pub fn joint_box_scores_raw<T: Scalar>(
    inst: &LabeledInstance,
    peers: &[&[CandidateEntity]],
    p: &BoxParams<T>,
    cos_scores: &[T],
) -> Result<Vec<T>> {
    p.check()?;
    if cos_scores.len() != inst.candidates.len() {
        return Err(Error::Invalid(format!(
            "{} cosine scores for {} candidates",
            cos_scores.len(),
            inst.candidates.len()
        )));
    }
    let points = embeddings::<T>(&inst.candidates)?;
    if peers.is_empty() {
        return Ok(cos_scores.to_vec());
    }
    let own = box_of(&points)?;
    let peer_boxes = peers
        .iter()
        .map(|c| box_of(&embeddings::<T>(c)?))
        .collect::<Result<Vec<_>>>()?;
    let region = joint_region(&own, &peer_boxes, p)?;
    points
        .iter()
        .zip(cos_scores)
        .map(|(e, &cos)| {
            let sim = match &region {
                Some(r) => box_similarity(e, r)?,
                None => T::zero(),
            };
            Ok(p.beta_box * sim + cos)
        })
        .collect()
}

/// Box-plus-cosine feature for one mention, min-max rescaled over its
/// candidates. Without peers the result is the rescaled cosine column.
pub fn joint_box_feature<T: Scalar>(
    inst: &LabeledInstance,
    peers: &[&[CandidateEntity]],
    p: &BoxParams<T>,
    cos_scores: &[T],
) -> Result<Vec<T>> {
    Ok(rescale(&joint_box_scores_raw(inst, peers, p, cos_scores)?))
}

/// Unconstrained parameterization used while training.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBoxParams<T> {
    pub psi: Vec<T>,
    pub raw_omega: Vec<T>,
    pub raw_beta: T,
}

impl<T: Scalar> RawBoxParams<T> {
    /// psi = 0, omega ~ 0.018, beta_box = 1.
    pub fn init(dim: usize) -> Self {
        RawBoxParams {
            psi: vec![T::zero(); dim],
            raw_omega: vec![T::of(-4.0); dim],
            raw_beta: inv_softplus(T::one()),
        }
    }

    pub fn to_params(&self) -> BoxParams<T> {
        BoxParams {
            psi: self.psi.clone(),
            omega: self.raw_omega.iter().map(|&r| softplus(r)).collect(),
            beta_box: softplus(self.raw_beta),
        }
    }

    /// Flat layout: psi, raw omega, raw beta.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = self.psi.clone();
        v.extend_from_slice(&self.raw_omega);
        v.push(self.raw_beta);
        v
    }

    pub fn from_vec(v: &[T]) -> Self {
        let d = (v.len() - 1) / 2;
        RawBoxParams {
            psi: v[..d].to_vec(),
            raw_omega: v[d..2 * d].to_vec(),
            raw_beta: v[2 * d],
        }
    }
}

/// Cached geometry of one training mention.
#[derive(Debug, Clone)]
pub struct BoxExample<T> {
    pub mention_id: String,
    points: Vec<Vec<T>>,
    own: Hyperbox<T>,
    peers: Vec<Hyperbox<T>>,
    cos: Vec<T>,
    labels: Vec<u8>,
}

impl<T: Scalar> BoxExample<T> {
    /// Raw scores plus their gradient rows w.r.t. the flat raw parameters.
    fn scores_and_jacobian(&self, raw: &RawBoxParams<T>) -> Result<(Vec<T>, Vec<Vec<T>>)> {
        let d = self.own.dim();
        let p = raw.to_params();
        let n_params = 2 * d + 1;
        let mut region_lo = self.own.lower.clone();
        let mut region_hi = self.own.upper.clone();
        // whether the binding lower/upper face comes from a projected peer box
        let mut lo_from_peer = vec![false; d];
        let mut hi_from_peer = vec![false; d];
        for pb in &self.peers {
            let nb = neighborhood(pb, &p)?;
            for k in 0..d {
                if nb.lower[k] > region_lo[k] {
                    region_lo[k] = nb.lower[k];
                    lo_from_peer[k] = true;
                }
                if nb.upper[k] < region_hi[k] {
                    region_hi[k] = nb.upper[k];
                    hi_from_peer[k] = true;
                }
            }
        }
        let region = Hyperbox {
            lower: region_lo,
            upper: region_hi,
        };
        let mut scores = Vec::with_capacity(self.points.len());
        let mut jac = Vec::with_capacity(self.points.len());
        if region.is_empty() {
            for &c in &self.cos {
                scores.push(c);
                jac.push(vec![T::zero(); n_params]);
            }
            return Ok((scores, jac));
        }
        let center = region.center();
        let half = T::half();
        let quarter = T::of(0.25);
        for (e, &cos) in self.points.iter().zip(&self.cos) {
            let sim = box_similarity(e, &region)?;
            let mut row = vec![T::zero(); n_params];
            for k in 0..d {
                let a_lo = if lo_from_peer[k] { T::one() } else { T::zero() };
                let a_hi = if hi_from_peer[k] { T::one() } else { T::zero() };
                let diff = center[k] - e[k];
                let sign = if diff > T::zero() {
                    T::one()
                } else if diff < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                // d sim / d center_k
                let ds_dc = -sim * sim * sign;
                let dc_dpsi = (a_lo + a_hi) * half;
                let dc_domega = (a_hi - a_lo) * quarter;
                row[k] = p.beta_box * ds_dc * dc_dpsi;
                row[d + k] = p.beta_box * ds_dc * dc_domega * sigmoid(raw.raw_omega[k]);
            }
            row[2 * d] = sim * sigmoid(raw.raw_beta);
            scores.push(p.beta_box * sim + cos);
            jac.push(row);
        }
        Ok((scores, jac))
    }

    /// Margin ranking loss of this mention and its gradient.
    pub fn loss_and_grad(&self, raw: &RawBoxParams<T>, mu: T) -> Result<(T, Vec<T>)> {
        let (scores, jac) = self.scores_and_jacobian(raw)?;
        let mut loss = T::zero();
        let mut grad = vec![T::zero(); jac.first().map_or(0, Vec::len)];
        for p in (0..scores.len()).filter(|&j| self.labels[j] == 1) {
            for n in (0..scores.len()).filter(|&j| self.labels[j] == 0) {
                let h = mu - (scores[p] - scores[n]);
                if h > T::zero() {
                    loss += h;
                    for (g, (jp, jn)) in grad.iter_mut().zip(jac[p].iter().zip(&jac[n])) {
                        *g += *jn - *jp;
                    }
                }
            }
        }
        Ok((loss, grad))
    }

    pub fn scores(&self, raw: &RawBoxParams<T>) -> Result<Vec<T>> {
        Ok(self.scores_and_jacobian(raw)?.0)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Candidate lists of the other mentions sharing a text with `inst`.
pub fn peers_of<'a>(ds: &'a Dataset, inst: &LabeledInstance) -> Vec<&'a [CandidateEntity]> {
    ds.instances
        .iter()
        .filter(|o| o.mention.text_id == inst.mention.text_id && o.mention.id != inst.mention.id)
        .map(|o| o.candidates.as_slice())
        .collect()
}

/// Reads the cosine column of an instance; absent values count as 0.
pub fn cos_column<T: Scalar>(inst: &LabeledInstance, column: Option<&str>) -> Vec<T> {
    inst.candidates
        .iter()
        .map(|c| {
            column
                .and_then(|k| c.external_scores.get(k))
                .map_or(T::zero(), |&v| T::of(v))
        })
        .collect()
}

/// Builds training examples for every mention that has at least one peer.
pub fn box_examples<T: Scalar>(ds: &Dataset, cos: Option<&str>) -> Result<Vec<BoxExample<T>>> {
    if ds.embedding_dim.is_none() {
        return Err(Error::Invalid(format!("dataset `{}` has no embeddings", ds.name)));
    }
    let mut out = Vec::new();
    for inst in &ds.instances {
        let peers = peers_of(ds, inst);
        if peers.is_empty() {
            continue;
        }
        let points = embeddings::<T>(&inst.candidates)?;
        out.push(BoxExample {
            mention_id: inst.mention.id.clone(),
            own: box_of(&points)?,
            points,
            peers: peers
                .iter()
                .map(|c| box_of(&embeddings::<T>(c)?))
                .collect::<Result<_>>()?,
            cos: cos_column(inst, cos),
            labels: inst.labels.clone(),
        });
    }
    Ok(out)
}

/// Fits the neighborhood projection and mixing weight by per-mention
/// gradient descent on the margin ranking loss of the raw joint scores.
pub fn train_box_params<T: Scalar>(
    ds: &Dataset,
    config: &TrainConfig,
    cos: Option<&str>,
) -> Result<BoxParams<T>> {
    let dim = ds
        .embedding_dim
        .ok_or_else(|| Error::Invalid(format!("dataset `{}` has no embeddings", ds.name)))?;
    let examples = box_examples::<T>(ds, cos)?;
    let mut raw = RawBoxParams::<T>::init(dim);
    let lr = T::of(config.learning_rate);
    let mu = T::of(config.margin);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        for &i in &order {
            let (loss, grad) = examples[i].loss_and_grad(&raw, mu)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "box loss is {loss} at mention `{}` (epoch {epoch})",
                    examples[i].mention_id
                )));
            }
            epoch_loss += loss;
            let mut flat = raw.to_vec();
            for (x, g) in flat.iter_mut().zip(grad) {
                *x -= lr * g;
            }
            raw = RawBoxParams::from_vec(&flat);
        }
        log::debug!("box epoch {epoch}: loss {epoch_loss}");
    }
    Ok(raw.to_params())
}
