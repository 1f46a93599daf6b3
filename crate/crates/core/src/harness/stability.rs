//! Spread of metrics across repeated runs, and rankings of coders.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use crate::metrics::{CoderMetrics, MetricsReport};
use crate::model::Condition;

/// z for a two-sided 95% normal interval.
const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Coverage,
    Overlap,
    Novelty,
    Divergence,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Coverage,
        Metric::Overlap,
        Metric::Novelty,
        Metric::Divergence,
    ];

    pub fn of(self, row: &CoderMetrics) -> Option<f64> {
        match self {
            Metric::Coverage => Some(row.coverage),
            Metric::Overlap => row.overlap,
            Metric::Novelty => Some(row.novelty),
            Metric::Divergence => row.divergence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub coder: String,
    pub metric: Metric,
    pub condition: Condition,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    /// `sd / mean`, only for a positive mean.
    pub cov: Option<f64>,
}

impl MetricStats {
    fn half_width(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        Z95 * self.sd / (self.n as f64).sqrt()
    }

    pub fn interval(&self) -> (f64, f64) {
        let h = self.half_width();
        (self.mean - h, self.mean + h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankComparison {
    pub higher: String,
    pub lower: String,
    pub mean_difference: f64,
    /// Whether the two 95% intervals overlap, i.e. the order is not clear.
    pub intervals_overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub metric: Metric,
    pub condition: Condition,
    /// Coders by descending mean, ties by id.
    pub order: Vec<String>,
    /// Each coder against the next one down.
    pub comparisons: Vec<RankComparison>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stats: Vec<MetricStats>,
    pub rankings: Vec<Ranking>,
}

impl StabilityReport {
    pub fn from_reports(reports: &[MetricsReport]) -> Self {
        let mut samples: BTreeMap<(Condition, Metric, String), Vec<f64>> = BTreeMap::new();
        for r in reports {
            for row in &r.rows {
                for m in Metric::ALL {
                    if let Some(v) = m.of(row) {
                        samples
                            .entry((r.metadata.condition, m, row.coder.clone()))
                            .or_default()
                            .push(v);
                    }
                }
            }
        }
        let stats: Vec<MetricStats> = samples
            .into_iter()
            .map(|((condition, metric, coder), values)| {
                let n = values.len();
                let mean = values.iter().mean();
                let sd = if n > 1 { values.iter().std_dev() } else { 0.0 };
                MetricStats {
                    coder,
                    metric,
                    condition,
                    n,
                    mean,
                    sd,
                    cov: (mean > 0.0).then(|| sd / mean),
                }
            })
            .collect();

        let mut groups: BTreeMap<(Condition, Metric), Vec<&MetricStats>> = BTreeMap::new();
        for s in &stats {
            groups.entry((s.condition, s.metric)).or_default().push(s);
        }
        let rankings = groups
            .into_iter()
            .map(|((condition, metric), mut entries)| {
                entries.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.coder.cmp(&b.coder)));
                let comparisons = entries
                    .windows(2)
                    .map(|w| {
                        let (hi, lo) = (w[0], w[1]);
                        let (hi_low, _) = hi.interval();
                        let (_, lo_high) = lo.interval();
                        RankComparison {
                            higher: hi.coder.clone(),
                            lower: lo.coder.clone(),
                            mean_difference: hi.mean - lo.mean,
                            intervals_overlap: hi_low <= lo_high,
                        }
                    })
                    .collect();
                Ranking {
                    metric,
                    condition,
                    order: entries.iter().map(|s| s.coder.clone()).collect(),
                    comparisons,
                }
            })
            .collect();
        StabilityReport { stats, rankings }
    }

    pub fn get(&self, coder: &str, metric: Metric, condition: Condition) -> Option<&MetricStats> {
        self.stats
            .iter()
            .find(|s| s.coder == coder && s.metric == metric && s.condition == condition)
    }

    /// Largest CoV over all (coder, metric, condition) cells.
    pub fn max_cov(&self) -> Option<f64> {
        self.stats.iter().filter_map(|s| s.cov).max_by(f64::total_cmp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stability report serializes")
    }
}
