use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{compute_observations, coverage, divergence, novelty, overlap, MetricsError};
use crate::model::{AggregateCodeSpace, Codebook, CoderKind, Condition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoderMetrics {
    pub coder: String,
    pub kind: CoderKind,
    pub coverage: f64,
    /// `None` when the leave-one-out baseline is empty.
    pub overlap: Option<f64>,
    pub novelty: f64,
    pub divergence: Option<f64>,
    /// Codes in the coder's codebook.
    pub codes: usize,
    /// Novel consolidated codes the coder owns.
    pub novel_codes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub condition: Condition,
    pub config_fingerprint: String,
    pub providers: Vec<String>,
    pub run: u32,
    pub seed: Option<u64>,
}

impl RunMetadata {
    pub fn for_acs(acs: &AggregateCodeSpace, providers: Vec<String>) -> Self {
        RunMetadata {
            condition: acs.condition,
            config_fingerprint: acs.config_fingerprint.clone(),
            providers,
            run: 0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: RunMetadata,
    pub rows: Vec<CoderMetrics>,
}

pub const CSV_HEADER: [&str; 10] = [
    "coder",
    "kind",
    "condition",
    "run",
    "coverage",
    "overlap",
    "novelty",
    "divergence",
    "codes",
    "novel_codes",
];

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl MetricsReport {
    pub fn row(&self, coder: &str) -> Option<&CoderMetrics> {
        self.rows.iter().find(|r| r.coder == coder)
    }

    /// Metrics as percentages with two decimals; undefined values are empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.coder.clone(),
                r.kind.to_string(),
                self.metadata.condition.to_string(),
                self.metadata.run.to_string(),
                percent(r.coverage),
                r.overlap.map(percent).unwrap_or_default(),
                percent(r.novelty),
                r.divergence.map(percent).unwrap_or_default(),
                r.codes.to_string(),
                r.novel_codes.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Concatenates several reports into one CSV with a single header.
    pub fn csv_of(reports: &[MetricsReport]) -> String {
        let mut out = String::new();
        for (i, r) in reports.iter().enumerate() {
            let csv = r.to_csv();
            let body = if i == 0 {
                csv.as_str()
            } else {
                csv.split_once('\n').map(|(_, b)| b).unwrap_or("")
            };
            let _ = write!(out, "{body}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Scores every codebook (individuals and groups) against the ACS. Overlap
/// and divergence that are undefined for a coder are left empty with a
/// note; a degenerate ACS is an error.
pub fn evaluate(
    acs: &AggregateCodeSpace,
    codebooks: &[Codebook],
    metadata: RunMetadata,
) -> Result<MetricsReport, MetricsError> {
    let m = compute_observations(acs, codebooks)?;
    let has_novel = m.has_novel_codes();
    let mut rows = Vec::with_capacity(m.coders().len());
    for entry in m.coders() {
        let id = entry.id.as_str();
        let mut notes = Vec::new();
        let coverage = coverage(id, &m)?;
        let overlap = match overlap(id, &m) {
            Ok(v) => Some(v),
            Err(e @ MetricsError::OverlapUndefined(_)) => {
                notes.push(e.to_string());
                None
            }
            Err(e) => return Err(e),
        };
        let divergence = match divergence(id, &m) {
            Ok(v) => Some(v),
            Err(e @ MetricsError::DivergenceUndefined { .. }) => {
                notes.push(e.to_string());
                None
            }
            Err(e) => return Err(e),
        };
        if !has_novel {
            notes.push("no novel codes in the aggregate code space; novelty is 0".into());
        }
        let (_, novel_codes) = m.owned_counts(id)?;
        rows.push(CoderMetrics {
            coder: entry.id.clone(),
            kind: entry.kind,
            coverage,
            overlap,
            novelty: novelty(id, &m)?,
            divergence,
            codes: entry.size,
            novel_codes,
            notes,
        });
    }
    Ok(MetricsReport { metadata, rows })
}
