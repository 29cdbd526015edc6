//! Real-valued logic operators.
//!
//! The weighted conjunction is `clamp(beta - sum_i w_i (1 - x_i))` with
//! non-negative weights; disjunction is its De Morgan dual and negation is
//! `1 - x`. Under alpha-semantics the parameters are expected to satisfy
//!
//! ```text
//! beta - (1 - alpha) * sum_i w_i + slack_big >= alpha
//! beta - alpha * w_i <= 1 - alpha + slack_i      for every input i
//! ```
//!
//! which [`constraint_residuals`] measures as hinge violations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{clamp01, inv_softplus, sigmoid, softplus, Scalar};

/// Raw slack used when a slack should be (numerically) zero.
pub const ZERO_SLACK_RAW: f64 = -30.0;

/// Initial raw slack; softplus(-2) ~ 0.127.
pub const INIT_SLACK_RAW: f64 = -2.0;

pub const INIT_WEIGHT: f64 = 0.7;
pub const INIT_BIAS: f64 = 0.9;

/// Parameters of one conjunction/disjunction gate. Weights and slacks are
/// stored pre-softplus so plain gradient steps keep them non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams<T> {
    pub raw_weights: Vec<T>,
    pub bias: T,
    pub raw_slacks: Vec<T>,
    pub raw_slack_big: T,
}

impl<T: Scalar> GateParams<T> {
    /// Default initialization: weights [`INIT_WEIGHT`], bias [`INIT_BIAS`], small slacks.
    pub fn init(arity: usize) -> Self {
        GateParams {
            raw_weights: vec![inv_softplus(T::of(INIT_WEIGHT)); arity],
            bias: T::of(INIT_BIAS),
            raw_slacks: vec![T::of(INIT_SLACK_RAW); arity],
            raw_slack_big: T::of(INIT_SLACK_RAW),
        }
    }

    /// Gate with the given effective weights and bias and (numerically) zero slacks.
    pub fn with_weights(weights: &[T], bias: T) -> Self {
        GateParams {
            raw_weights: weights.iter().map(|&w| raw_weight(w)).collect(),
            bias,
            raw_slacks: vec![T::of(ZERO_SLACK_RAW); weights.len()],
            raw_slack_big: T::of(ZERO_SLACK_RAW),
        }
    }

    pub fn with_slacks(mut self, slacks: &[T], slack_big: T) -> Self {
        self.raw_slacks = slacks.iter().map(|&s| raw_weight(s)).collect();
        self.raw_slack_big = raw_weight(slack_big);
        self
    }

    pub fn arity(&self) -> usize {
        self.raw_weights.len()
    }

    pub fn weights(&self) -> Vec<T> {
        self.raw_weights.iter().map(|&r| softplus(r)).collect()
    }

    pub fn slacks(&self) -> Vec<T> {
        self.raw_slacks.iter().map(|&r| softplus(r)).collect()
    }

    pub fn slack_big(&self) -> T {
        softplus(self.raw_slack_big)
    }
}

/// Pre-softplus value for a desired non-negative weight or slack.
fn raw_weight<T: Scalar>(w: T) -> T {
    if w <= T::of(1e-12) {
        T::of(ZERO_SLACK_RAW)
    } else {
        inv_softplus(w)
    }
}

/// Learnable threshold, stored as the pre-sigmoid `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams<T> {
    pub gamma: T,
}

impl<T: Scalar> ThresholdParams<T> {
    pub fn new(gamma: T) -> Self {
        ThresholdParams { gamma }
    }

    /// Threshold fixed at `theta`, which must lie in (0, 1).
    pub fn at(theta: T) -> Self {
        ThresholdParams {
            gamma: crate::scalar::logit(theta),
        }
    }

    pub fn theta(&self) -> T {
        sigmoid(self.gamma)
    }
}

impl<T: Scalar> Default for ThresholdParams<T> {
    fn default() -> Self {
        ThresholdParams { gamma: T::zero() }
    }
}

fn check_inputs<T: Scalar>(inputs: &[T], g: &GateParams<T>) -> Result<()> {
    if inputs.len() != g.arity() {
        return Err(Error::Invalid(format!(
            "gate of arity {} given {} inputs",
            g.arity(),
            inputs.len()
        )));
    }
    if inputs.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("NaN gate input".into()));
    }
    Ok(())
}

/// Pre-clamp activation of the weighted conjunction.
pub(crate) fn and_preactivation<T: Scalar>(inputs: &[T], g: &GateParams<T>) -> T {
    inputs
        .iter()
        .zip(&g.raw_weights)
        .fold(g.bias, |acc, (&x, &r)| acc - softplus(r) * (T::one() - x))
}

pub fn lnn_and<T: Scalar>(inputs: &[T], g: &GateParams<T>) -> Result<T> {
    check_inputs(inputs, g)?;
    Ok(clamp01(and_preactivation(inputs, g)))
}

pub fn lnn_or<T: Scalar>(inputs: &[T], g: &GateParams<T>) -> Result<T> {
    let negated: Vec<T> = inputs.iter().map(|&x| T::one() - x).collect();
    Ok(T::one() - lnn_and(&negated, g)?)
}

pub fn lnn_not<T: Scalar>(x: T) -> T {
    T::one() - x
}

/// Product t-norm.
pub fn tnorm_and<T: Scalar>(inputs: &[T]) -> T {
    inputs.iter().fold(T::one(), |acc, &x| acc * x)
}

/// Probabilistic sum, the dual of [`tnorm_and`].
pub fn tnorm_or<T: Scalar>(inputs: &[T]) -> T {
    T::one() - inputs.iter().fold(T::one(), |acc, &x| acc * (T::one() - x))
}

/// Smooth threshold `f * sigmoid(f - theta)` with `theta = sigmoid(gamma)`.
pub fn threshold_gate<T: Scalar>(f: T, t: &ThresholdParams<T>) -> T {
    f * sigmoid(f - t.theta())
}

/// Hinge violations of the alpha-semantics constraints: the conjunction
/// constraint first, then one entry per input.
pub fn constraint_residuals<T: Scalar>(g: &GateParams<T>, alpha: T) -> Vec<T> {
    let w = g.weights();
    let sum_w = w.iter().fold(T::zero(), |a, &x| a + x);
    let mut out = Vec::with_capacity(w.len() + 1);
    out.push((alpha - (g.bias - (T::one() - alpha) * sum_w + g.slack_big())).max(T::zero()));
    for (wi, di) in w.iter().zip(g.slacks()) {
        out.push(((g.bias - alpha * *wi) - (T::one() - alpha + di)).max(T::zero()));
    }
    out
}

/// Hand-set rule and feature weights for the non-learning scorer.
/// `feature_weights` is consumed in order across rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualWeights {
    pub rule_weights: Vec<f64>,
    pub feature_weights: Vec<f64>,
}

/// `sum_i rw_i * prod_j (fw_ij * f_ij)` over rules `i` and their features `j`.
pub fn manual_score<T: Scalar>(rule_values: &[Vec<T>], mw: &ManualWeights) -> Result<T> {
    let n_features: usize = rule_values.iter().map(Vec::len).sum();
    if mw.rule_weights.len() != rule_values.len() || mw.feature_weights.len() != n_features {
        return Err(Error::Invalid(format!(
            "{} rules / {} features given {} rule weights / {} feature weights",
            rule_values.len(),
            n_features,
            mw.rule_weights.len(),
            mw.feature_weights.len()
        )));
    }
    let mut fw = mw.feature_weights.iter();
    let mut total = T::zero();
    for (values, &rw) in rule_values.iter().zip(&mw.rule_weights) {
        let prod = values
            .iter()
            .fold(T::one(), |acc, &f| acc * T::of(*fw.next().expect("length checked")) * f);
        total += T::of(rw) * prod;
    }
    Ok(total)
}
