//! The two stage-4 penalties and the dual-threshold merge decision.

use std::collections::BTreeSet;

use super::config::{MergeConfig, PenaltyFormula};
use crate::model::ConsolidatedCode;

/// Example-difference term `e`. Two codes without examples give `e = 0`.
pub fn example_difference(
    a: &BTreeSet<String>,
    b: &BTreeSet<String>,
    formula: PenaltyFormula,
) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    let jaccard = a.intersection(b).count() as f64 / union as f64;
    match formula {
        PenaltyFormula::Dissimilarity => 1.0 - jaccard,
        PenaltyFormula::AsPrinted => jaccard,
    }
}

/// `base + penalty * e^2`.
pub fn penalized_distance(
    a: &ConsolidatedCode,
    b: &ConsolidatedCode,
    base: f64,
    config: &MergeConfig,
) -> f64 {
    let e = example_difference(&a.examples, &b.examples, config.penalty_formula);
    base + config.penalty * e * e
}

/// Relative excess of a node's unique-example count over the average
/// candidate node: `max((count - avg) / (max - avg), 0)`, and 0 when
/// `max == avg`.
pub fn overshoot(count: usize, count_avg: f64, count_max: f64) -> f64 {
    let span = count_max - count_avg;
    if span <= 0.0 {
        return 0.0;
    }
    ((count as f64 - count_avg) / span).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeDecision {
    Merge,
    /// Beyond the upper threshold: neither merged nor linked.
    Reject,
    /// Inside the band but pushed out by the size penalty.
    Neighbor,
}

pub fn merge_decision(dist: f64, o: f64, config: &MergeConfig) -> MergeDecision {
    if dist <= config.lower_threshold {
        MergeDecision::Merge
    } else if dist > config.upper_threshold {
        MergeDecision::Reject
    } else if dist + config.penalty * o * o < config.upper_threshold {
        MergeDecision::Merge
    } else {
        MergeDecision::Neighbor
    }
}
