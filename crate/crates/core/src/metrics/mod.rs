//! Coder metrics against an aggregate code space.
//!
//! Every coder `x` gets an observation strength per consolidated code:
//! 1 when it owns the code, otherwise `ln(n + 1) / ln(N + 1)` where `N` is
//! the code's neighbor count and `n` the neighbors `x` owns. Coders are
//! weighted by `1 / ln(max(size, median size))` and a code's score is the
//! weighted sum of observations over all contributing coders.

mod jsd;
mod report;

use std::collections::BTreeSet;

use statrs::statistics::{Data, OrderStatistics};
use thiserror::Error;

pub use jsd::{jensen_shannon, normalize_distribution};
pub use report::{evaluate, CoderMetrics, MetricsReport, RunMetadata};

use crate::model::{AggregateCodeSpace, Codebook, CoderKind};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("coder `{0}` does not appear in the aggregate code space")]
    UnknownCoder(String),
    #[error("no codebook supplied for coder `{0}` of the aggregate code space")]
    MissingCodebook(String),
    #[error("all code scores are zero; the aggregate code space is degenerate")]
    DegenerateScores,
    #[error("overlap of `{0}` is undefined: removing its contribution leaves nothing; overlap needs at least 2 contributing coders")]
    OverlapUndefined(String),
    #[error("divergence of `{coder}` is undefined: the {which} distribution sums to zero")]
    DivergenceUndefined { coder: String, which: &'static str },
    #[error("no coder named `{0}` in the observation matrix")]
    NotInMatrix(String),
}

/// Smallest size fed to `ln` so weights stay positive and finite.
const MIN_WEIGHT_SIZE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CoderEntry {
    pub id: String,
    pub kind: CoderKind,
    /// Codes in the coder's codebook.
    pub size: usize,
    pub weight: f64,
    owners: BTreeSet<String>,
    /// Indices of contributing coders this entry stands for (itself for an
    /// individual coder).
    members: Vec<usize>,
}

/// Observation strengths, weights and code scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    coders: Vec<CoderEntry>,
    code_ids: Vec<String>,
    novel: Vec<bool>,
    /// Whether each coder owns each code; full neighbor credit also gives
    /// an observation of 1, so this is tracked separately.
    owned: Vec<Vec<bool>>,
    obs: Vec<Vec<f64>>,
    score: Vec<f64>,
    size_median: f64,
    contributors: usize,
}

/// Clamps to [0, 1] and turns `-0.0` (an empty `f64` sum) into `0.0`.
fn unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0) + 0.0
}

pub fn coder_weight(size: usize, size_median: f64) -> f64 {
    1.0 / (size as f64).max(size_median).max(MIN_WEIGHT_SIZE).ln()
}

/// Builds the observation matrix. Individual codebooks contribute to code
/// scores; group codebooks are scored passively. The median size is taken
/// over individual codebooks only.
pub fn compute_observations(
    acs: &AggregateCodeSpace,
    codebooks: &[Codebook],
) -> Result<ObservationMatrix, MetricsError> {
    let in_acs = acs.coder_ids();
    let (individuals, groups): (Vec<&Codebook>, Vec<&Codebook>) =
        codebooks.iter().partition(|cb| cb.kind != CoderKind::Group);

    for cb in &individuals {
        if !in_acs.contains(cb.coder_id.as_str()) {
            return Err(MetricsError::UnknownCoder(cb.coder_id.clone()));
        }
    }
    let provided: BTreeSet<&str> = individuals.iter().map(|cb| cb.coder_id.as_str()).collect();
    if let Some(missing) = in_acs.iter().find(|c| !provided.contains(*c)) {
        return Err(MetricsError::MissingCodebook(missing.to_string()));
    }

    let sizes: Vec<f64> = individuals.iter().map(|cb| cb.len() as f64).collect();
    let size_median = if sizes.is_empty() {
        MIN_WEIGHT_SIZE
    } else {
        Data::new(sizes).median()
    };

    let mut coders: Vec<CoderEntry> = individuals
        .iter()
        .enumerate()
        .map(|(i, cb)| CoderEntry {
            id: cb.coder_id.clone(),
            kind: cb.kind,
            size: cb.len(),
            weight: coder_weight(cb.len(), size_median),
            owners: std::iter::once(cb.coder_id.clone()).collect(),
            members: vec![i],
        })
        .collect();
    for g in &groups {
        let owners: BTreeSet<String> = g.owner_ids().into_iter().map(str::to_string).collect();
        let mut members = Vec::new();
        for o in &owners {
            match individuals.iter().position(|cb| &cb.coder_id == o) {
                Some(i) => members.push(i),
                None => return Err(MetricsError::UnknownCoder(o.clone())),
            }
        }
        coders.push(CoderEntry {
            id: g.coder_id.clone(),
            kind: CoderKind::Group,
            size: g.len(),
            weight: coder_weight(g.len(), size_median),
            owners,
            members,
        });
    }

    let index = acs.index();
    let owned: Vec<Vec<bool>> = coders
        .iter()
        .map(|x| {
            acs.codes
                .iter()
                .map(|c| c.owners.iter().any(|o| x.owners.contains(o)))
                .collect()
        })
        .collect();
    let obs: Vec<Vec<f64>> = coders
        .iter()
        .zip(&owned)
        .map(|(x, own)| {
            acs.codes
                .iter()
                .zip(own)
                .map(|(c, &is_owner)| {
                    if is_owner {
                        return 1.0;
                    }
                    let total = c.neighbors.len();
                    if total == 0 {
                        return 0.0;
                    }
                    let owned = c
                        .neighbors
                        .iter()
                        .filter(|n| {
                            acs.codes[index[*n]]
                                .owners
                                .iter()
                                .any(|o| x.owners.contains(o))
                        })
                        .count();
                    ((owned + 1) as f64).ln() / ((total + 1) as f64).ln()
                })
                .collect()
        })
        .collect();

    let contributors = individuals.len();
    let score = (0..acs.codes.len())
        .map(|c| (0..contributors).map(|x| obs[x][c] * coders[x].weight).sum())
        .collect();

    Ok(ObservationMatrix {
        coders,
        code_ids: acs.codes.iter().map(|c| c.id.clone()).collect(),
        novel: acs.codes.iter().map(|c| c.novel).collect(),
        owned,
        obs,
        score,
        size_median,
        contributors,
    })
}

impl ObservationMatrix {
    pub fn coders(&self) -> &[CoderEntry] {
        &self.coders
    }

    pub fn code_ids(&self) -> &[String] {
        &self.code_ids
    }

    pub fn size_median(&self) -> f64 {
        self.size_median
    }

    pub fn scores(&self) -> &[f64] {
        &self.score
    }

    fn coder_index(&self, coder: &str) -> Result<usize, MetricsError> {
        self.coders
            .iter()
            .position(|c| c.id == coder)
            .ok_or_else(|| MetricsError::NotInMatrix(coder.to_string()))
    }

    pub fn row(&self, coder: &str) -> Result<&[f64], MetricsError> {
        Ok(&self.obs[self.coder_index(coder)?])
    }

    pub fn obs(&self, coder: &str, code_id: &str) -> Option<f64> {
        let x = self.coder_index(coder).ok()?;
        let c = self.code_ids.iter().position(|id| id == code_id)?;
        Some(self.obs[x][c])
    }

    pub fn weight(&self, coder: &str) -> Result<f64, MetricsError> {
        Ok(self.coders[self.coder_index(coder)?].weight)
    }

    /// Recomputes every score from observations and weights; used as an
    /// internal consistency check.
    pub fn scores_consistent(&self, tolerance: f64) -> bool {
        self.score.iter().enumerate().all(|(c, &s)| {
            let again: f64 = (0..self.contributors)
                .map(|x| self.obs[x][c] * self.coders[x].weight)
                .sum();
            (again - s).abs() <= tolerance
        })
    }

    /// Leave-one-out baseline: scores without the coder's own contribution
    /// (for a group, without every member's). Rounding negatives clamp to 0.
    pub fn baseline(&self, coder: &str) -> Result<Vec<f64>, MetricsError> {
        let x = self.coder_index(coder)?;
        let members = &self.coders[x].members;
        Ok(self
            .score
            .iter()
            .enumerate()
            .map(|(c, &s)| {
                let own: f64 = members
                    .iter()
                    .map(|&m| self.obs[m][c] * self.coders[m].weight)
                    .sum();
                (s - own).max(0.0)
            })
            .collect())
    }

    /// Number of consolidated codes the coder owns, and how many of those
    /// are novel.
    pub fn owned_counts(&self, coder: &str) -> Result<(usize, usize), MetricsError> {
        let own = &self.owned[self.coder_index(coder)?];
        let owned = own.iter().filter(|&&o| o).count();
        let novel = own.iter().zip(&self.novel).filter(|(&o, &n)| o && n).count();
        Ok((owned, novel))
    }

    pub fn has_novel_codes(&self) -> bool {
        self.novel.iter().any(|&n| n)
    }
}

/// `Σ obs·score / Σ score`.
pub fn coverage(coder: &str, m: &ObservationMatrix) -> Result<f64, MetricsError> {
    let row = m.row(coder)?;
    let total: f64 = m.score.iter().sum();
    if total <= 0.0 {
        return Err(MetricsError::DegenerateScores);
    }
    let covered: f64 = row.iter().zip(&m.score).map(|(o, s)| o * s).sum();
    Ok(unit(covered / total))
}

/// Coverage measured against the leave-one-out baseline `B`.
pub fn overlap(coder: &str, m: &ObservationMatrix) -> Result<f64, MetricsError> {
    let row = m.row(coder)?;
    let baseline = m.baseline(coder)?;
    let total: f64 = baseline.iter().sum();
    if total <= 0.0 {
        return Err(MetricsError::OverlapUndefined(coder.to_string()));
    }
    let shared: f64 = row.iter().zip(&baseline).map(|(o, b)| o * b).sum();
    Ok(unit(shared / total))
}

/// Share of the novel codes' score held by the coder's own novel codes.
/// Returns 0 when the ACS has no novel codes.
pub fn novelty(coder: &str, m: &ObservationMatrix) -> Result<f64, MetricsError> {
    let x = m.coder_index(coder)?;
    let row = &m.obs[x];
    let total: f64 = m
        .score
        .iter()
        .zip(&m.novel)
        .filter(|(_, &n)| n)
        .map(|(s, _)| s)
        .sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let own: f64 = (0..row.len())
        .filter(|&c| m.novel[c] && m.owned[x][c])
        .map(|c| row[c] * m.score[c])
        .sum();
    Ok(unit(own / total))
}

/// `sqrt(JSD(B̂ ‖ ôbs))` with base-2 logarithms, so the value lies in [0, 1].
pub fn divergence(coder: &str, m: &ObservationMatrix) -> Result<f64, MetricsError> {
    let row = m.row(coder)?;
    let baseline = m.baseline(coder)?;
    let b = normalize_distribution(&baseline).ok_or(MetricsError::DivergenceUndefined {
        coder: coder.to_string(),
        which: "baseline",
    })?;
    let p = normalize_distribution(row).ok_or(MetricsError::DivergenceUndefined {
        coder: coder.to_string(),
        which: "observation",
    })?;
    Ok(unit(jensen_shannon(&b, &p)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize_group, union_csp, Code};

    fn book(id: &str, labels: &[&str]) -> Codebook {
        Codebook {
            coder_id: id.into(),
            kind: CoderKind::Human,
            codes: labels
                .iter()
                .map(|l| Code {
                    label: l.to_string(),
                    definition: None,
                    examples: Default::default(),
                    owner: id.into(),
                })
                .collect(),
        }
    }

    /// Coders A and B; c1 owned by both, c2 by A, c3 by B; no neighbors.
    fn worked() -> (AggregateCodeSpace, Vec<Codebook>) {
        let books = vec![book("A", &["c1", "c2"]), book("B", &["c1", "c3"])];
        (union_csp(&books, "fp").unwrap(), books)
    }

    #[test]
    fn worked_fixture_values() {
        let (acs, books) = worked();
        let m = compute_observations(&acs, &books).unwrap();
        let w = 1.0 / 2f64.ln();
        assert!((m.weight("A").unwrap() - w).abs() < 1e-15);
        assert!((w - 1.4427).abs() < 1e-4);
        assert!((coverage("A", &m).unwrap() - 0.75).abs() < 1e-12);
        assert!((overlap("A", &m).unwrap() - 0.5).abs() < 1e-12);
        assert!((novelty("A", &m).unwrap() - 0.5).abs() < 1e-12);
        assert!((divergence("A", &m).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(m.scores_consistent(1e-12));
    }

    #[test]
    fn neighbor_credit_uses_log_ratio() {
        let books = vec![book("A", &["x", "n1"]), book("B", &["x", "n2", "n3", "q"])];
        let mut acs = union_csp(&books, "fp").unwrap();
        let id = |l: &str| acs.codes.iter().find(|c| c.label == l).unwrap().id.clone();
        let (q, n1, n2, n3) = (id("q"), id("n1"), id("n2"), id("n3"));
        acs.set_neighbors(vec![(q.clone(), n1), (q.clone(), n2), (q.clone(), n3)]);
        let m = compute_observations(&acs, &books).unwrap();
        // A owns 1 of q's 3 neighbors: ln 2 / ln 4
        assert!((m.obs("A", &q).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.obs("B", &q), Some(1.0));
    }

    #[test]
    fn full_neighbor_credit_is_not_ownership() {
        // B's only code "q" neighbors both of A's codes, one of them novel
        let books = vec![book("A", &["x", "n"]), book("B", &["x", "q"])];
        let mut acs = union_csp(&books, "fp").unwrap();
        let id = |l: &str| acs.codes.iter().find(|c| c.label == l).unwrap().id.clone();
        let (x, n, q) = (id("x"), id("n"), id("q"));
        acs.set_neighbors(vec![(n.clone(), x.clone()), (n.clone(), q)]);
        let m = compute_observations(&acs, &books).unwrap();
        // n's neighbors x and q are both B's: full credit without owning n
        assert_eq!(m.obs("B", &n), Some(1.0));
        assert_eq!(m.owned_counts("B").unwrap(), (2, 1));
        let nov_b = novelty("B", &m).unwrap();
        let nov_a = novelty("A", &m).unwrap();
        assert!((nov_a + nov_b - 1.0).abs() < 1e-12, "{nov_a} + {nov_b}");
    }

    #[test]
    fn group_of_everyone_covers_everything() {
        let (acs, mut books) = worked();
        let g = synthesize_group("all", &[&books[0], &books[1]]).unwrap();
        books.push(g);
        let m = compute_observations(&acs, &books).unwrap();
        assert_eq!(coverage("all", &m).unwrap(), 1.0);
        assert!(matches!(overlap("all", &m), Err(MetricsError::OverlapUndefined(_))));
        // groups do not change scores
        let (_, plain) = worked();
        let m2 = compute_observations(&acs, &plain).unwrap();
        assert_eq!(m.scores(), m2.scores());
    }

    #[test]
    fn coder_owning_nothing_has_zero_coverage() {
        let (acs, mut books) = worked();
        books.push(Codebook {
            coder_id: "empty".into(),
            kind: CoderKind::Group,
            codes: vec![],
        });
        let m = compute_observations(&acs, &books).unwrap();
        assert_eq!(coverage("empty", &m).unwrap(), 0.0);
        assert_eq!(novelty("empty", &m).unwrap(), 0.0);
        assert!(matches!(
            divergence("empty", &m),
            Err(MetricsError::DivergenceUndefined { which: "observation", .. })
        ));
    }

    #[test]
    fn identical_codebooks_fully_overlap() {
        let books = vec![book("A", &["x", "y"]), book("B", &["x", "y"])];
        let acs = union_csp(&books, "fp").unwrap();
        let m = compute_observations(&acs, &books).unwrap();
        assert!((overlap("A", &m).unwrap() - 1.0).abs() < 1e-12);
        assert!(divergence("A", &m).unwrap().abs() < 1e-7);
        let n = novelty("A", &m).unwrap();
        assert!(n == 0.0 && n.is_sign_positive());
        assert!(!m.has_novel_codes());
    }

    #[test]
    fn disjoint_coders_diverge_fully() {
        let books = vec![book("A", &["x"]), book("B", &["y"])];
        let acs = union_csp(&books, "fp").unwrap();
        let m = compute_observations(&acs, &books).unwrap();
        assert!((divergence("A", &m).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(novelty("A", &m).unwrap(), 0.5);
        assert_eq!(overlap("A", &m).unwrap(), 0.0);
    }

    #[test]
    fn small_codebooks_get_clamped_weight() {
        assert_eq!(coder_weight(1, 1.0), 1.0 / 2f64.ln());
        assert_eq!(coder_weight(10, 3.0), 1.0 / 10f64.ln());
        assert_eq!(coder_weight(2, 7.0), 1.0 / 7f64.ln());
    }

    #[test]
    fn missing_and_unknown_coders_are_errors() {
        let (acs, books) = worked();
        assert_eq!(
            compute_observations(&acs, &books[..1]),
            Err(MetricsError::MissingCodebook("B".into()))
        );
        let mut extra = books.clone();
        extra.push(book("Z", &["q"]));
        assert_eq!(
            compute_observations(&acs, &extra),
            Err(MetricsError::UnknownCoder("Z".into()))
        );
        let m = compute_observations(&acs, &books).unwrap();
        assert!(matches!(coverage("nobody", &m), Err(MetricsError::NotInMatrix(_))));
    }
}
