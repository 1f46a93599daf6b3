//! Average-linkage agglomerative clustering over a precomputed distance
//! matrix.
//!
//! Cluster ids follow the usual dendrogram convention: leaves are
//! `0..n`, the cluster created by the `t`-th merge is `n + t`. Among equal
//! distances the pair with the smaller (rank, rank) key merges first, where
//! a cluster's rank is the smallest rank of its members.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

/// Dense symmetric distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, d: f64) {
        self.values[i * self.n + j] = d;
        self.values[j * self.n + i] = d;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeStep {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    distance: f64,
    key: (usize, usize),
    slots: (usize, usize),
    versions: (u32, u32),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.key.cmp(&other.key))
            .then(self.slots.cmp(&other.slots))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs average linkage, returning merges in order. Merging stops once the
/// smallest remaining linkage distance exceeds `cutoff`; average linkage has
/// no inversions, so every later merge would exceed it too.
///
/// `ranks[i]` orders the leaves for tie-breaking and must be a permutation
/// of `0..n`.
pub fn average_linkage(matrix: &DistanceMatrix, ranks: &[usize], cutoff: f64) -> Vec<MergeStep> {
    let n = matrix.len();
    assert_eq!(ranks.len(), n, "one rank per leaf");
    let mut dist = matrix.clone();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut version = vec![0u32; n];
    let mut key: Vec<usize> = ranks.to_vec();
    let mut cluster_id: Vec<usize> = (0..n).collect();

    let candidate = |i: usize, j: usize, dist: &DistanceMatrix, key: &[usize], version: &[u32]| {
        let (a, b) = if key[i] <= key[j] { (i, j) } else { (j, i) };
        Candidate {
            distance: dist.get(i, j),
            key: (key[a], key[b]),
            slots: (a, b),
            versions: (version[a], version[b]),
        }
    };

    let mut heap = BinaryHeap::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if dist.get(i, j) <= cutoff {
                heap.push(Reverse(candidate(i, j, &dist, &key, &version)));
            }
        }
    }

    let mut steps = Vec::new();
    while let Some(Reverse(c)) = heap.pop() {
        let (a, b) = c.slots;
        if !active[a] || !active[b] || version[a] != c.versions.0 || version[b] != c.versions.1 {
            continue;
        }
        if c.distance > cutoff {
            break;
        }
        steps.push(MergeStep {
            left: cluster_id[a],
            right: cluster_id[b],
            distance: c.distance,
            size: size[a] + size[b],
        });

        let (keep, drop) = (a.min(b), a.max(b));
        let (sk, sd) = (size[keep] as f64, size[drop] as f64);
        for k in 0..n {
            if active[k] && k != keep && k != drop {
                let d = (sk * dist.get(keep, k) + sd * dist.get(drop, k)) / (sk + sd);
                dist.set(keep, k, d);
            }
        }
        active[drop] = false;
        size[keep] += size[drop];
        key[keep] = key[keep].min(key[drop]);
        version[keep] += 1;
        cluster_id[keep] = n + steps.len() - 1;

        for k in 0..n {
            if active[k] && k != keep && dist.get(keep, k) <= cutoff {
                heap.push(Reverse(candidate(keep, k, &dist, &key, &version)));
            }
        }
    }
    steps
}

/// Leaf indices of every cluster id, for leaves and merges alike.
pub fn cluster_members(n: usize, steps: &[MergeStep]) -> Vec<Vec<usize>> {
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for s in steps {
        let mut m = members[s.left].clone();
        m.extend_from_slice(&members[s.right]);
        m.sort_unstable();
        members.push(m);
    }
    members
}

/// Flat clusters after applying every step, as sorted leaf lists ordered by
/// smallest leaf.
pub fn flat_clusters(n: usize, steps: &[MergeStep]) -> Vec<Vec<usize>> {
    let members = cluster_members(n, steps);
    let mut absorbed = vec![false; n + steps.len()];
    for s in steps {
        absorbed[s.left] = true;
        absorbed[s.right] = true;
    }
    let mut out: Vec<Vec<usize>> = (0..members.len())
        .filter(|&id| !absorbed[id])
        .map(|id| members[id].clone())
        .collect();
    out.sort();
    out
}
