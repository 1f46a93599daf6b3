//! Pair samples for choosing thresholds by hand, and the recommendation
//! drawn from reviewed samples.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, ProviderError};
use crate::merge::{embed_codes, embedding_text};
use crate::model::{AggregateCodeSpace, Dataset};
use crate::providers::cosine_distance;

/// Which text a pair's distance is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceBasis {
    #[default]
    Label,
    LabelDefinition,
}

/// Which threshold the reviewed pairs calibrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationTarget {
    /// Pairs must mean the same thing.
    #[default]
    Strict,
    /// Pairs must at least be similar.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSide {
    pub id: String,
    pub label: String,
    pub definition: Option<String>,
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPair {
    pub a: PairSide,
    pub b: PairSide,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub threshold: f64,
    pub basis: DistanceBasis,
    pub requested: usize,
    /// Nearest-below first: distances are sorted descending.
    pub pairs: Vec<SampledPair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Same,
    Similar,
    Different,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDecision {
    pub a: String,
    pub b: String,
    pub distance: f64,
    pub decision: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decisions {
    pub threshold: f64,
    pub decisions: Vec<PairDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub target: CalibrationTarget,
    pub candidate: f64,
    pub recommended: f64,
    pub rejected: usize,
    pub reviewed: usize,
}

/// Step below a rejected distance when no approved pair lies under it.
const BELOW_REJECTED: f64 = 1e-6;

/// The `count` pairs with distance nearest below `threshold`.
pub fn sample_pairs(
    acs: &AggregateCodeSpace,
    embedder: &dyn crate::providers::Embedder,
    basis: DistanceBasis,
    threshold: f64,
    count: usize,
    dataset: Option<&Dataset>,
) -> Result<PairSample, ProviderError> {
    let codes = &acs.codes;
    let with_definition = basis == DistanceBasis::LabelDefinition;
    let emb = embed_codes(codes, with_definition, embedder)?;
    let mut below: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..codes.len() {
        for j in (i + 1)..codes.len() {
            let d = cosine_distance(&emb[i], &emb[j]);
            if d < threshold {
                below.push((d, i, j));
            }
        }
    }
    // descending distance; ties by embedding text so output is stable
    below.sort_by(|x, y| {
        y.0.total_cmp(&x.0).then_with(|| {
            let key = |p: &(f64, usize, usize)| {
                (
                    embedding_text(&codes[p.1], with_definition),
                    embedding_text(&codes[p.2], with_definition),
                )
            };
            key(x).cmp(&key(y))
        })
    });
    let mut warnings = Vec::new();
    if below.len() < count {
        warnings.push(format!(
            "only {} pairs lie below {threshold}; {count} requested",
            below.len()
        ));
    }
    let side = |i: usize| {
        let c = &codes[i];
        PairSide {
            id: c.id.clone(),
            label: c.label.clone(),
            definition: c.definition.clone(),
            examples: match dataset {
                Some(ds) => ds.example_texts(&c.examples),
                None => c.examples.iter().cloned().collect(),
            },
        }
    };
    let pairs = below
        .into_iter()
        .take(count)
        .map(|(d, i, j)| SampledPair {
            a: side(i),
            b: side(j),
            distance: d,
        })
        .collect();
    Ok(PairSample {
        threshold,
        basis,
        requested: count,
        pairs,
        warnings,
    })
}

impl Decisions {
    /// Every pair of a sample left undecided.
    pub fn blank(sample: &PairSample) -> Self {
        Decisions {
            threshold: sample.threshold,
            decisions: sample
                .pairs
                .iter()
                .map(|p| PairDecision {
                    a: p.a.id.clone(),
                    b: p.b.id.clone(),
                    distance: p.distance,
                    decision: Verdict::Undecided,
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(DataError::from_json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decisions serialize")
    }
}

fn approves(target: CalibrationTarget, v: Verdict) -> Option<bool> {
    match (v, target) {
        (Verdict::Undecided, _) => None,
        (Verdict::Same, _) => Some(true),
        (Verdict::Similar, CalibrationTarget::Upper) => Some(true),
        (Verdict::Similar, CalibrationTarget::Strict) => Some(false),
        (Verdict::Different, _) => Some(false),
    }
}

/// Largest threshold at which every reviewed pair it would merge was
/// approved. With no rejections the candidate stands; otherwise the
/// highest approved distance below the closest rejection, or a step below
/// that rejection when none is approved.
pub fn recommend_threshold(decisions: &Decisions, target: CalibrationTarget) -> Recommendation {
    let reviewed: Vec<(f64, bool)> = decisions
        .decisions
        .iter()
        .filter_map(|d| approves(target, d.decision).map(|ok| (d.distance, ok)))
        .collect();
    let min_rejected = reviewed
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(d, _)| *d)
        .min_by(f64::total_cmp);
    let recommended = match min_rejected {
        None => decisions.threshold,
        Some(r) => reviewed
            .iter()
            .filter(|(d, ok)| *ok && *d < r)
            .map(|(d, _)| *d)
            .max_by(f64::total_cmp)
            .unwrap_or((r - BELOW_REJECTED).max(0.0))
            .min(decisions.threshold),
    };
    Recommendation {
        target,
        candidate: decisions.threshold,
        recommended,
        rejected: reviewed.iter().filter(|(_, ok)| !ok).count(),
        reviewed: reviewed.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decisions(items: &[(f64, Verdict)]) -> Decisions {
        Decisions {
            threshold: 0.32,
            decisions: items
                .iter()
                .enumerate()
                .map(|(i, &(d, v))| PairDecision {
                    a: format!("a{i}"),
                    b: format!("b{i}"),
                    distance: d,
                    decision: v,
                })
                .collect(),
        }
    }

    #[test]
    fn all_approved_keeps_candidate() {
        let d = decisions(&[(0.31, Verdict::Same), (0.2, Verdict::Same)]);
        assert_eq!(recommend_threshold(&d, CalibrationTarget::Strict).recommended, 0.32);
    }

    #[test]
    fn rejection_moves_below_it() {
        let d = decisions(&[
            (0.31, Verdict::Different),
            (0.30, Verdict::Same),
            (0.25, Verdict::Same),
        ]);
        let r = recommend_threshold(&d, CalibrationTarget::Strict);
        assert_eq!(r.recommended, 0.30);
        assert!(r.recommended < 0.31);
        let d = decisions(&[(0.31, Verdict::Same), (0.2, Verdict::Different)]);
        let r = recommend_threshold(&d, CalibrationTarget::Strict);
        assert!(r.recommended < 0.2);
    }

    #[test]
    fn similar_counts_only_for_upper() {
        let d = decisions(&[(0.31, Verdict::Similar), (0.30, Verdict::Undecided)]);
        assert_eq!(recommend_threshold(&d, CalibrationTarget::Upper).recommended, 0.32);
        let r = recommend_threshold(&d, CalibrationTarget::Strict);
        assert!(r.recommended < 0.31);
        assert_eq!(r.reviewed, 1);
    }

    #[test]
    fn decisions_round_trip() {
        let d = decisions(&[(0.123456789012345, Verdict::Similar)]);
        assert_eq!(Decisions::from_json(&d.to_json()).unwrap(), d);
    }
}
