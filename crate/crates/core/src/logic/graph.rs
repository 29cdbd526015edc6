use std::fmt;

use serde::{Deserialize, Serialize};

use super::ops::{and_preactivation, GateParams, ThresholdParams};
use super::FeatureSource;
use crate::error::{Error, Result};
use crate::scalar::{clamp01, sigmoid, softplus, Scalar};

/// Operator family used when evaluating gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Weighted gates with learnable weights, bias, slacks and thresholds.
    Lnn,
    /// Product t-norm gates; only thresholds are learnable.
    Tnorm,
    /// Fixed hand-set weights: disjunction is a weighted sum, conjunction a
    /// weighted product, thresholds are hard cut-offs.
    Manual,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Lnn => "lnn",
            Mode::Tnorm => "tnorm",
            Mode::Manual => "manual",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lnn" => Ok(Mode::Lnn),
            "tnorm" => Ok(Mode::Tnorm),
            "manual" => Ok(Mode::Manual),
            _ => Err(Error::Invalid(format!("unknown mode `{s}` (expected lnn|tnorm|manual)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node<T> {
    And {
        params: GateParams<T>,
        children: Vec<Node<T>>,
    },
    Or {
        params: GateParams<T>,
        children: Vec<Node<T>>,
    },
    Not(Box<Node<T>>),
    Threshold {
        feature: String,
        params: ThresholdParams<T>,
        learnable: bool,
    },
    Raw {
        feature: String,
    },
}

/// Role of one entry of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Slack,
    SlackBig,
    Gamma,
    FixedGamma,
}

impl ParamKind {
    pub fn is_gate(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Bias | ParamKind::Slack | ParamKind::SlackBig)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringGraph<T> {
    pub root: Node<T>,
    pub alpha: T,
    pub mode: Mode,
}

fn leaf_value<T: Scalar>(feature: &str, row: &(impl FeatureSource + ?Sized)) -> Result<T> {
    let v = row
        .feature(feature)
        .ok_or_else(|| Error::MissingLeaf(feature.to_string()))?;
    if v.is_nan() {
        return Err(Error::NonFinite(format!("feature `{feature}` is NaN")));
    }
    Ok(T::of(v))
}

/// Derivative of `clamp01` at `z`; zero at the kinks.
fn clamp_slope<T: Scalar>(z: T) -> T {
    if z > T::zero() && z < T::one() {
        T::one()
    } else {
        T::zero()
    }
}

impl<T: Scalar> Node<T> {
    fn gate_len(params: &GateParams<T>) -> usize {
        2 * params.arity() + 2
    }

    /// Number of flat parameters owned by this subtree.
    pub fn param_count(&self) -> usize {
        match self {
            Node::And { params, children } | Node::Or { params, children } => {
                Self::gate_len(params) + children.iter().map(Node::param_count).sum::<usize>()
            }
            Node::Not(c) => c.param_count(),
            Node::Threshold { .. } => 1,
            Node::Raw { .. } => 0,
        }
    }

    pub fn children(&self) -> &[Node<T>] {
        match self {
            Node::And { children, .. } | Node::Or { children, .. } => children,
            Node::Not(c) => std::slice::from_ref(c.as_ref()),
            _ => &[],
        }
    }

    /// Feature names of all leaves, left to right.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Node::Threshold { feature, .. } | Node::Raw { feature } => out.push(feature),
            _ => self.children().iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// Count of And/Or/Not operators.
    pub fn operator_count(&self) -> usize {
        let own = usize::from(matches!(self, Node::And { .. } | Node::Or { .. } | Node::Not(_)));
        own + self.children().iter().map(Node::operator_count).sum::<usize>()
    }

    fn eval(&self, mode: Mode, row: &(impl FeatureSource + ?Sized)) -> Result<T> {
        match self {
            Node::Raw { feature } => leaf_value(feature, row),
            Node::Threshold { feature, params, .. } => {
                let f: T = leaf_value(feature, row)?;
                Ok(match mode {
                    Mode::Manual => {
                        if f > params.theta() {
                            f
                        } else {
                            T::zero()
                        }
                    }
                    _ => super::threshold_gate(f, params),
                })
            }
            Node::Not(c) => Ok(T::one() - c.eval(mode, row)?),
            Node::And { params, children } | Node::Or { params, children } => {
                let is_and = matches!(self, Node::And { .. });
                let xs = children
                    .iter()
                    .map(|c| c.eval(mode, row))
                    .collect::<Result<Vec<T>>>()?;
                if xs.len() != params.arity() {
                    return Err(Error::Invalid(format!(
                        "gate of arity {} has {} children",
                        params.arity(),
                        xs.len()
                    )));
                }
                Ok(match (mode, is_and) {
                    (Mode::Lnn, true) => clamp01(and_preactivation(&xs, params)),
                    (Mode::Lnn, false) => {
                        let neg: Vec<T> = xs.iter().map(|&x| T::one() - x).collect();
                        T::one() - clamp01(and_preactivation(&neg, params))
                    }
                    (Mode::Tnorm, true) => super::tnorm_and(&xs),
                    (Mode::Tnorm, false) => super::tnorm_or(&xs),
                    (Mode::Manual, true) => xs
                        .iter()
                        .zip(&params.raw_weights)
                        .fold(T::one(), |acc, (&x, &w)| acc * w * x),
                    (Mode::Manual, false) => xs
                        .iter()
                        .zip(&params.raw_weights)
                        .fold(T::zero(), |acc, (&x, &w)| acc + w * x),
                })
            }
        }
    }

    /// Accumulates `upstream * d(value)/d(param)` into `grad[offset..]`.
    fn backward(
        &self,
        mode: Mode,
        row: &(impl FeatureSource + ?Sized),
        upstream: T,
        grad: &mut [T],
        offset: usize,
    ) -> Result<()> {
        match self {
            Node::Raw { .. } => Ok(()),
            Node::Threshold { feature, params, .. } => {
                if mode != Mode::Manual {
                    let f: T = leaf_value(feature, row)?;
                    let theta = params.theta();
                    let s = sigmoid(f - theta);
                    // d/dgamma f*s(f - theta) = -f s (1-s) theta (1-theta)
                    grad[offset] += upstream * (-f * s * (T::one() - s) * theta * (T::one() - theta));
                }
                Ok(())
            }
            Node::Not(c) => c.backward(mode, row, -upstream, grad, offset),
            Node::And { params, children } | Node::Or { params, children } => {
                let is_and = matches!(self, Node::And { .. });
                let n = params.arity();
                let xs = children
                    .iter()
                    .map(|c| c.eval(mode, row))
                    .collect::<Result<Vec<T>>>()?;
                // d(out)/d(x_i), and parameter partials for this gate
                let mut dx = vec![T::zero(); n];
                match mode {
                    Mode::Lnn => {
                        // and: out = clamp(z), z = b - sum w (1-x)
                        // or:  out = 1 - clamp(z), z = b - sum w x
                        let inputs: Vec<T> = if is_and {
                            xs.clone()
                        } else {
                            xs.iter().map(|&x| T::one() - x).collect()
                        };
                        let z = and_preactivation(&inputs, params);
                        let sign = if is_and { T::one() } else { -T::one() };
                        let dz = upstream * sign * clamp_slope(z);
                        for i in 0..n {
                            let w = softplus(params.raw_weights[i]);
                            grad[offset + i] += dz * (-(T::one() - inputs[i]) * sigmoid(params.raw_weights[i]));
                            // dz/dx_i = w for and; for or dz/dx_i = -w, times sign -1
                            dx[i] = upstream * clamp_slope(z) * w;
                        }
                        grad[offset + n] += dz;
                    }
                    Mode::Tnorm => {
                        for i in 0..n {
                            let others = xs
                                .iter()
                                .enumerate()
                                .filter(|&(j, _)| j != i)
                                .fold(T::one(), |acc, (_, &x)| {
                                    acc * if is_and { x } else { T::one() - x }
                                });
                            dx[i] = upstream * others;
                        }
                    }
                    Mode::Manual => {
                        let w = &params.raw_weights;
                        for i in 0..n {
                            if is_and {
                                let others = (0..n)
                                    .filter(|&j| j != i)
                                    .fold(T::one(), |acc, j| acc * w[j] * xs[j]);
                                grad[offset + i] += upstream * others * xs[i];
                                dx[i] = upstream * others * w[i];
                            } else {
                                grad[offset + i] += upstream * xs[i];
                                dx[i] = upstream * w[i];
                            }
                        }
                    }
                }
                let mut child_offset = offset + Self::gate_len(params);
                for (c, d) in children.iter().zip(dx) {
                    if d != T::zero() {
                        c.backward(mode, row, d, grad, child_offset)?;
                    }
                    child_offset += c.param_count();
                }
                Ok(())
            }
        }
    }

    fn visit_params(&self, out: &mut Vec<(ParamKind, T)>) {
        match self {
            Node::And { params, children } | Node::Or { params, children } => {
                out.extend(params.raw_weights.iter().map(|&w| (ParamKind::Weight, w)));
                out.push((ParamKind::Bias, params.bias));
                out.extend(params.raw_slacks.iter().map(|&s| (ParamKind::Slack, s)));
                out.push((ParamKind::SlackBig, params.raw_slack_big));
                children.iter().for_each(|c| c.visit_params(out));
            }
            Node::Not(c) => c.visit_params(out),
            Node::Threshold { params, learnable, .. } => out.push((
                if *learnable {
                    ParamKind::Gamma
                } else {
                    ParamKind::FixedGamma
                },
                params.gamma,
            )),
            Node::Raw { .. } => {}
        }
    }

    fn load_params(&mut self, values: &[T], cursor: &mut usize) {
        let mut take = || {
            let v = values[*cursor];
            *cursor += 1;
            v
        };
        match self {
            Node::And { params, children } | Node::Or { params, children } => {
                for w in params.raw_weights.iter_mut() {
                    *w = take();
                }
                params.bias = take();
                for s in params.raw_slacks.iter_mut() {
                    *s = take();
                }
                params.raw_slack_big = take();
                children.iter_mut().for_each(|c| c.load_params(values, cursor));
            }
            Node::Not(c) => c.load_params(values, cursor),
            Node::Threshold { params, .. } => params.gamma = take(),
            Node::Raw { .. } => {}
        }
    }

    fn gates<'a>(&'a self, out: &mut Vec<(usize, &'a GateParams<T>)>, offset: usize) {
        match self {
            Node::And { params, children } | Node::Or { params, children } => {
                out.push((offset, params));
                let mut o = offset + Self::gate_len(params);
                for c in children {
                    c.gates(out, o);
                    o += c.param_count();
                }
            }
            Node::Not(c) => c.gates(out, offset),
            _ => {}
        }
    }

    /// Smallest distance of any clamp pre-activation (or hard threshold
    /// input) to a non-differentiable point.
    fn kink_distance(&self, mode: Mode, row: &(impl FeatureSource + ?Sized)) -> Result<T> {
        let mut best = T::infinity();
        match self {
            Node::Raw { .. } => {}
            Node::Threshold { feature, params, .. } => {
                if mode == Mode::Manual {
                    let f: T = leaf_value(feature, row)?;
                    best = (f - params.theta()).abs();
                }
            }
            Node::Not(c) => best = c.kink_distance(mode, row)?,
            Node::And { params, children } | Node::Or { params, children } => {
                if mode == Mode::Lnn {
                    let xs = children
                        .iter()
                        .map(|c| c.eval(mode, row))
                        .collect::<Result<Vec<T>>>()?;
                    let inputs: Vec<T> = if matches!(self, Node::And { .. }) {
                        xs
                    } else {
                        xs.iter().map(|&x| T::one() - x).collect()
                    };
                    let z = and_preactivation(&inputs, params);
                    best = z.abs().min((z - T::one()).abs());
                }
                for c in children {
                    best = best.min(c.kink_distance(mode, row)?);
                }
            }
        }
        Ok(best)
    }
}

impl<T: Scalar> ScoringGraph<T> {
    pub fn new(root: Node<T>, alpha: T, mode: Mode) -> Self {
        ScoringGraph { root, alpha, mode }
    }

    pub fn evaluate(&self, row: &(impl FeatureSource + ?Sized)) -> Result<T> {
        self.root.eval(self.mode, row)
    }

    /// Evaluates the graph and adds `upstream * d(score)/d(params)` to `grad`.
    pub fn backward(&self, row: &(impl FeatureSource + ?Sized), upstream: T, grad: &mut [T]) -> Result<T> {
        debug_assert_eq!(grad.len(), self.param_count());
        let v = self.evaluate(row)?;
        if upstream != T::zero() {
            self.root.backward(self.mode, row, upstream, grad, 0)?;
        }
        Ok(v)
    }

    pub fn param_count(&self) -> usize {
        self.root.param_count()
    }

    /// Flat raw parameter vector in depth-first order. Gates contribute
    /// their raw weights, bias, raw slacks and raw conjunction slack;
    /// threshold leaves contribute gamma.
    pub fn parameters(&self) -> Vec<T> {
        self.labeled_parameters().into_iter().map(|(_, v)| v).collect()
    }

    pub fn parameter_kinds(&self) -> Vec<ParamKind> {
        self.labeled_parameters().into_iter().map(|(k, _)| k).collect()
    }

    fn labeled_parameters(&self) -> Vec<(ParamKind, T)> {
        let mut out = Vec::with_capacity(self.param_count());
        self.root.visit_params(&mut out);
        out
    }

    /// Human-readable name per flat parameter, e.g. `or.1/and.0/w2`.
    pub fn parameter_labels(&self) -> Vec<String> {
        fn walk<T>(node: &Node<T>, path: &str, out: &mut Vec<String>) {
            let at = |p: &str, s: &str| if p.is_empty() { s.to_string() } else { format!("{p}/{s}") };
            match node {
                Node::And { params, children } | Node::Or { params, children } => {
                    let kind = if matches!(node, Node::And { .. }) { "and" } else { "or" };
                    let here = at(path, kind);
                    let n = params.raw_weights.len();
                    out.extend((0..n).map(|i| format!("{here}/w{i}")));
                    out.push(format!("{here}/beta"));
                    out.extend((0..n).map(|i| format!("{here}/slack{i}")));
                    out.push(format!("{here}/slack_big"));
                    for (i, c) in children.iter().enumerate() {
                        walk(c, &format!("{here}.{i}"), out);
                    }
                }
                Node::Not(c) => walk(c, &at(path, "not"), out),
                Node::Threshold { feature, .. } => out.push(format!("{}/gamma", at(path, feature))),
                Node::Raw { .. } => {}
            }
        }
        let mut out = Vec::new();
        walk(&self.root, "", &mut out);
        out
    }

    pub fn set_parameters(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Invalid(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut cursor = 0;
        self.root.load_params(values, &mut cursor);
        Ok(())
    }

    pub fn leaves(&self) -> Vec<&str> {
        self.root.leaves()
    }

    /// Distinct leaf feature names in first-appearance order.
    pub fn features(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in self.leaves() {
            if !out.iter().any(|o| o == l) {
                out.push(l.to_string());
            }
        }
        out
    }

    /// Sum of constraint violations over all gates; zero outside LNN mode.
    pub fn residual_sum(&self) -> T {
        if self.mode != Mode::Lnn {
            return T::zero();
        }
        let mut gates = Vec::new();
        self.root.gates(&mut gates, 0);
        gates
            .iter()
            .flat_map(|(_, g)| super::constraint_residuals(g, self.alpha))
            .fold(T::zero(), |a, r| a + r)
    }

    /// Adds `scale * d(residual_sum)/d(params)` to `grad`.
    pub fn residual_backward(&self, scale: T, grad: &mut [T]) {
        if self.mode != Mode::Lnn || scale == T::zero() {
            return;
        }
        let alpha = self.alpha;
        let mut gates = Vec::new();
        self.root.gates(&mut gates, 0);
        for (off, g) in gates {
            let n = g.arity();
            let r = super::constraint_residuals(g, alpha);
            // layout: weights [0,n), bias n, slacks [n+1, 2n+1), slack_big 2n+1
            if r[0] > T::zero() {
                grad[off + n] -= scale;
                for i in 0..n {
                    grad[off + i] += scale * (T::one() - alpha) * sigmoid(g.raw_weights[i]);
                }
                grad[off + 2 * n + 1] -= scale * sigmoid(g.raw_slack_big);
            }
            for i in 0..n {
                if r[i + 1] > T::zero() {
                    grad[off + n] += scale;
                    grad[off + i] -= scale * alpha * sigmoid(g.raw_weights[i]);
                    grad[off + n + 1 + i] -= scale * sigmoid(g.raw_slacks[i]);
                }
            }
        }
    }

    /// Distance of the current residual hinges to their kinks.
    pub fn residual_kink_distance(&self) -> T {
        if self.mode != Mode::Lnn {
            return T::infinity();
        }
        let mut gates = Vec::new();
        self.root.gates(&mut gates, 0);
        let alpha = self.alpha;
        let mut best = T::infinity();
        for (_, g) in gates {
            let w = g.weights();
            let sum_w = w.iter().fold(T::zero(), |a, &x| a + x);
            best = best.min((alpha - (g.bias - (T::one() - alpha) * sum_w + g.slack_big())).abs());
            for (wi, di) in w.iter().zip(g.slacks()) {
                best = best.min(((g.bias - alpha * *wi) - (T::one() - alpha + di)).abs());
            }
        }
        best
    }

    /// Distance of every clamp pre-activation under `row` to 0 or 1.
    pub fn kink_distance(&self, row: &(impl FeatureSource + ?Sized)) -> Result<T> {
        self.root.kink_distance(self.mode, row)
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ScoringGraph<U> {
        ScoringGraph::from_doc(&self.to_doc()).expect("a graph's own document is well-formed")
    }
}

/// Serializable node description carrying both effective and raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slacks: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slack_big: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw_slacks: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw_slack_big: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub learnable: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub children: Vec<NodeDoc>,
}

impl NodeDoc {
    fn bare(kind: &str) -> Self {
        NodeDoc {
            kind: kind.to_string(),
            feature: None,
            weights: None,
            beta: None,
            slacks: None,
            slack_big: None,
            raw_weights: None,
            raw_slacks: None,
            raw_slack_big: None,
            gamma: None,
            theta: None,
            learnable: None,
            children: Vec::new(),
        }
    }
}

/// Checkpoint form of a [`ScoringGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub mode: Mode,
    pub alpha: f64,
    pub root: NodeDoc,
}

fn f64s<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

impl<T: Scalar> Node<T> {
    fn to_doc(&self, mode: Mode) -> NodeDoc {
        match self {
            Node::And { params, children } | Node::Or { params, children } => {
                let mut d = NodeDoc::bare(if matches!(self, Node::And { .. }) { "and" } else { "or" });
                // manual gates hold their weights directly
                d.weights = Some(if mode == Mode::Manual {
                    f64s(&params.raw_weights)
                } else {
                    f64s(&params.weights())
                });
                d.beta = Some(params.bias.as_f64());
                d.slacks = Some(f64s(&params.slacks()));
                d.slack_big = Some(params.slack_big().as_f64());
                d.raw_weights = Some(f64s(&params.raw_weights));
                d.raw_slacks = Some(f64s(&params.raw_slacks));
                d.raw_slack_big = Some(params.raw_slack_big.as_f64());
                d.children = children.iter().map(|c| c.to_doc(mode)).collect();
                d
            }
            Node::Not(c) => {
                let mut d = NodeDoc::bare("not");
                d.children = vec![c.to_doc(mode)];
                d
            }
            Node::Threshold { feature, params, learnable } => {
                let mut d = NodeDoc::bare("threshold");
                d.feature = Some(feature.clone());
                d.gamma = Some(params.gamma.as_f64());
                d.theta = Some(params.theta().as_f64());
                d.learnable = Some(*learnable);
                d
            }
            Node::Raw { feature } => {
                let mut d = NodeDoc::bare("raw");
                d.feature = Some(feature.clone());
                d
            }
        }
    }

    fn from_doc(d: &NodeDoc) -> Result<Self> {
        let bad = |what: &str| Error::Invalid(format!("`{}` node is missing {what}", d.kind));
        let feature = || d.feature.clone().ok_or_else(|| bad("feature"));
        match d.kind.as_str() {
            "and" | "or" => {
                let raw_weights: Vec<T> = d
                    .raw_weights
                    .as_ref()
                    .ok_or_else(|| bad("raw_weights"))?
                    .iter()
                    .map(|&x| T::of(x))
                    .collect();
                let n = raw_weights.len();
                let params = GateParams {
                    raw_weights,
                    bias: T::of(d.beta.ok_or_else(|| bad("beta"))?),
                    raw_slacks: d
                        .raw_slacks
                        .as_ref()
                        .ok_or_else(|| bad("raw_slacks"))?
                        .iter()
                        .map(|&x| T::of(x))
                        .collect(),
                    raw_slack_big: T::of(d.raw_slack_big.ok_or_else(|| bad("raw_slack_big"))?),
                };
                if params.raw_slacks.len() != n || d.children.len() != n {
                    return Err(Error::Invalid(format!("`{}` node arity is inconsistent", d.kind)));
                }
                let children = d.children.iter().map(Node::from_doc).collect::<Result<_>>()?;
                Ok(if d.kind == "and" {
                    Node::And { params, children }
                } else {
                    Node::Or { params, children }
                })
            }
            "not" => match d.children.as_slice() {
                [c] => Ok(Node::Not(Box::new(Node::from_doc(c)?))),
                _ => Err(Error::Invalid("`not` node needs exactly one child".into())),
            },
            "threshold" => Ok(Node::Threshold {
                feature: feature()?,
                params: ThresholdParams::new(T::of(d.gamma.ok_or_else(|| bad("gamma"))?)),
                learnable: d.learnable.unwrap_or(true),
            }),
            "raw" => Ok(Node::Raw { feature: feature()? }),
            other => Err(Error::Invalid(format!("unknown node kind `{other}`"))),
        }
    }
}

impl<T: Scalar> ScoringGraph<T> {
    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            mode: self.mode,
            alpha: self.alpha.as_f64(),
            root: self.root.to_doc(self.mode),
        }
    }

    /// Rebuilds a graph from its document using the raw parameter fields,
    /// so a save/load cycle is exact.
    pub fn from_doc(doc: &GraphDoc) -> Result<Self> {
        Ok(ScoringGraph {
            root: Node::from_doc(&doc.root)?,
            alpha: T::of(doc.alpha),
            mode: doc.mode,
        })
    }

    /// Installs hand-set weights: `rule_weights` go to the inputs of the
    /// root disjunction, `feature_weights` to every other gate input in
    /// depth-first order.
    pub fn apply_manual_weights(&mut self, mw: &super::ManualWeights) -> Result<()> {
        fn walk<T: Scalar>(node: &mut Node<T>, fw: &mut std::slice::Iter<'_, f64>, used: &mut usize) -> Result<()> {
            match node {
                Node::And { params, children } | Node::Or { params, children } => {
                    for w in params.raw_weights.iter_mut() {
                        *w = T::of(*fw.next().ok_or_else(|| {
                            Error::Invalid("too few feature weights for the graph".into())
                        })?);
                        *used += 1;
                    }
                    for c in children {
                        walk(c, fw, used)?;
                    }
                }
                Node::Not(c) => walk(c, fw, used)?,
                _ => {}
            }
            Ok(())
        }
        let mut fw = mw.feature_weights.iter();
        let mut used = 0;
        match &mut self.root {
            Node::Or { params, children } => {
                if mw.rule_weights.len() != params.arity() {
                    return Err(Error::Invalid(format!(
                        "{} rule weights for {} rules",
                        mw.rule_weights.len(),
                        params.arity()
                    )));
                }
                params.raw_weights = mw.rule_weights.iter().map(|&w| T::of(w)).collect();
                for c in children {
                    walk(c, &mut fw, &mut used)?;
                }
            }
            other => {
                if mw.rule_weights.len() > 1 {
                    return Err(Error::Invalid("several rule weights for a single-rule graph".into()));
                }
                walk(other, &mut fw, &mut used)?;
            }
        }
        if fw.next().is_some() {
            return Err(Error::Invalid(format!("too many feature weights, graph uses {used}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{threshold_gate, ManualWeights};

    fn tl(f: &str, theta: f64) -> Node<f64> {
        Node::Threshold {
            feature: f.into(),
            params: ThresholdParams::at(theta),
            learnable: true,
        }
    }

    #[test]
    fn identity_graph() {
        let g = ScoringGraph::new(Node::Raw { feature: "prom".into() }, 0.7, Mode::Lnn);
        assert_eq!(g.evaluate(&[("prom", 0.8)]).unwrap(), 0.8);
        assert!(matches!(g.evaluate(&[("jacc", 0.8)]), Err(Error::MissingLeaf(f)) if f == "prom"));
    }

    #[test]
    fn composed_conjunction_of_thresholds() {
        let root = Node::And {
            params: GateParams::with_weights(&[1.0, 1.0], 1.0),
            children: vec![tl("jacc", 0.5), tl("ctx", 0.5)],
        };
        let g = ScoringGraph::new(root, 0.7, Mode::Lnn);
        let tlv = threshold_gate(0.7, &ThresholdParams::<f64>::new(0.0));
        // clamp(1 - 2 (1 - 0.38488)) = clamp(-0.23) = 0
        assert!(1.0 - 2.0 * (1.0 - tlv) < 0.0);
        assert_eq!(g.evaluate(&[("jacc", 0.7), ("ctx", 0.7)]).unwrap(), 0.0);
    }

    #[test]
    fn tnorm_ignores_gate_parameters() {
        let root = Node::And {
            params: GateParams::with_weights(&[3.0, 0.1], -2.0),
            children: vec![Node::Raw { feature: "a".into() }, Node::Raw { feature: "b".into() }],
        };
        let g = ScoringGraph::new(root, 0.7, Mode::Tnorm);
        assert_eq!(g.evaluate(&[("a", 0.5), ("b", 0.5)]).unwrap(), 0.25);
    }

    #[test]
    fn manual_graph_matches_manual_score() {
        let rule = |a: &str, b: &str| Node::And {
            params: GateParams::with_weights(&[1.0, 1.0], 1.0),
            children: vec![Node::Raw { feature: a.into() }, Node::Raw { feature: b.into() }],
        };
        let root = Node::Or {
            params: GateParams::with_weights(&[1.0, 1.0], 1.0),
            children: vec![rule("jacc", "ctx"), rule("lev", "prom")],
        };
        let mut g = ScoringGraph::new(root, 0.7, Mode::Manual);
        let mw = ManualWeights { rule_weights: vec![0.6, 0.4], feature_weights: vec![1.0, 0.5, 2.0, 1.0] };
        g.apply_manual_weights(&mw).unwrap();
        let row = [("jacc", 0.7), ("ctx", 0.5), ("lev", 0.3), ("prom", 0.9)];
        let want = crate::logic::manual_score(&[vec![0.7, 0.5], vec![0.3, 0.9]], &mw).unwrap();
        assert!((g.evaluate(&row).unwrap() as f64 - want).abs() < 1e-15);
    }

    #[test]
    fn hard_threshold_in_manual_mode() {
        let g = ScoringGraph::new(tl("jacc", 0.4), 0.7, Mode::Manual);
        assert_eq!(g.evaluate(&[("jacc", 0.3)]).unwrap(), 0.0);
        assert_eq!(g.evaluate(&[("jacc", 0.6)]).unwrap(), 0.6);
    }

    #[test]
    fn parameter_round_trip_and_doc_round_trip() {
        let root = Node::Or {
            params: GateParams::init(2),
            children: vec![
                Node::And {
                    params: GateParams::init(2),
                    children: vec![tl("jacc", 0.3), Node::Not(Box::new(tl("ctx", 0.6)))],
                },
                Node::Raw { feature: "prom".into() },
            ],
        };
        let mut g = ScoringGraph::new(root, 0.7, Mode::Lnn);
        assert_eq!(g.param_count(), 6 + 6 + 2);
        let p: Vec<f64> = (0..g.param_count()).map(|i| 0.1 * i as f64 - 0.3).collect();
        g.set_parameters(&p).unwrap();
        assert_eq!(g.parameters(), p);
        let doc = serde_json::to_string(&g.to_doc()).unwrap();
        let back = ScoringGraph::<f64>::from_doc(&serde_json::from_str(&doc).unwrap()).unwrap();
        assert_eq!(back, g);
        assert_eq!(g.features(), vec!["jacc", "ctx", "prom"]);
        assert_eq!(g.root.operator_count(), 3);
    }
}
