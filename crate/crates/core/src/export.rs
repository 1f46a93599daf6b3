//! Node-link export of an ACS for network views.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::ObservationMatrix;
use crate::model::{AggregateCodeSpace, Condition, SourceRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub score: f64,
    /// Observation strength per coder, including groups.
    pub obs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: String,
    pub label: String,
    pub definition: Option<String>,
    pub owners: Vec<String>,
    pub novel: bool,
    pub sources: Vec<SourceRef>,
    pub examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<NodeMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub a: String,
    pub b: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkExport {
    pub condition: Condition,
    pub config_fingerprint: String,
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<NetworkEdge>,
}

impl NetworkExport {
    /// One node per consolidated code and one edge per neighbor pair. With
    /// an observation matrix over the same ACS, nodes carry scores and
    /// per-coder observations.
    pub fn build(acs: &AggregateCodeSpace, metrics: Option<&ObservationMatrix>) -> Self {
        let nodes = acs
            .codes
            .iter()
            .enumerate()
            .map(|(i, c)| NetworkNode {
                id: c.id.clone(),
                label: c.label.clone(),
                definition: c.definition.clone(),
                owners: c.owners.iter().cloned().collect(),
                novel: c.novel,
                sources: c.sources.iter().cloned().collect(),
                examples: c.examples.len(),
                metrics: metrics.and_then(|m| {
                    let pos = if m.code_ids().get(i) == Some(&c.id) {
                        i
                    } else {
                        m.code_ids().iter().position(|id| id == &c.id)?
                    };
                    Some(NodeMetrics {
                        score: m.scores()[pos],
                        obs: m
                            .coders()
                            .iter()
                            .map(|x| (x.id.clone(), m.row(&x.id).map(|r| r[pos]).unwrap_or(0.0)))
                            .collect(),
                    })
                }),
            })
            .collect();
        let edges = acs
            .neighbor_pairs()
            .into_iter()
            .map(|(a, b)| NetworkEdge {
                a,
                b,
                kind: "neighbor".into(),
            })
            .collect();
        NetworkExport {
            condition: acs.condition,
            config_fingerprint: acs.config_fingerprint.clone(),
            nodes,
            edges,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("export serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
