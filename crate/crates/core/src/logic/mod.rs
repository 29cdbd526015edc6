//! Weighted real-valued logic: operators, scoring graphs and their
//! gradients.

mod graph;
mod ops;

use std::collections::{BTreeMap, HashMap};

pub use graph::{GraphDoc, Mode, Node, NodeDoc, ParamKind, ScoringGraph};
pub use ops::{
    constraint_residuals, lnn_and, lnn_not, lnn_or, manual_score, threshold_gate, tnorm_and, tnorm_or,
    GateParams, ManualWeights, ThresholdParams, INIT_BIAS, INIT_SLACK_RAW, INIT_WEIGHT, ZERO_SLACK_RAW,
};

/// Anything a graph leaf can read a named feature value from.
pub trait FeatureSource {
    fn feature(&self, name: &str) -> Option<f64>;
}

impl FeatureSource for HashMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl FeatureSource for BTreeMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl FeatureSource for [(&str, f64)] {
    fn feature(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

impl<const N: usize> FeatureSource for [(&str, f64); N] {
    fn feature(&self, name: &str) -> Option<f64> {
        self.as_slice().feature(name)
    }
}
