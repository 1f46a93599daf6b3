//! Straight-line transcription of the weighting and metric algorithms.
//! Shares no code with the library: it reads plain owner and neighbor
//! lists and recomputes everything with loops.

#[derive(Debug, Clone)]
pub struct OracleCode {
    pub owners: Vec<String>,
    /// Indices into the code list.
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct OracleCoder {
    pub id: String,
    pub size: usize,
    /// Coder ids whose ownership counts for this coder.
    pub stands_for: Vec<String>,
    pub is_group: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMetrics {
    pub coverage: f64,
    pub overlap: Option<f64>,
    pub novelty: f64,
    pub divergence: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn owns(coder: &OracleCoder, code: &OracleCode) -> bool {
    for o in &code.owners {
        for s in &coder.stands_for {
            if o == s {
                return true;
            }
        }
    }
    false
}

fn obs(coder: &OracleCoder, code: &OracleCode, codes: &[OracleCode]) -> f64 {
    if owns(coder, code) {
        return 1.0;
    }
    let big_n = code.neighbors.len();
    if big_n == 0 {
        return 0.0;
    }
    let mut n = 0;
    for &j in &code.neighbors {
        if owns(coder, &codes[j]) {
            n += 1;
        }
    }
    ((n + 1) as f64).ln() / ((big_n + 1) as f64).ln()
}

fn jsd_bits(p: &[f64], q: &[f64]) -> f64 {
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for i in 0..p.len() {
        let m = (p[i] + q[i]) / 2.0;
        if p[i] > 0.0 {
            kl_p += p[i] * (p[i] / m).ln();
        }
        if q[i] > 0.0 {
            kl_q += q[i] * (q[i] / m).ln();
        }
    }
    (kl_p + kl_q) / 2.0 / 2f64.ln()
}

/// Metrics for every coder, in input order.
pub fn evaluate(codes: &[OracleCode], coders: &[OracleCoder]) -> Vec<OracleMetrics> {
    let individual_sizes: Vec<f64> = coders
        .iter()
        .filter(|c| !c.is_group)
        .map(|c| c.size as f64)
        .collect();
    let med = median(individual_sizes);
    let weight = |c: &OracleCoder| 1.0 / (c.size as f64).max(med).max(2.0).ln();

    let mut score = vec![0.0; codes.len()];
    for x in coders.iter().filter(|c| !c.is_group) {
        for (i, c) in codes.iter().enumerate() {
            score[i] += obs(x, c, codes) * weight(x);
        }
    }

    let mut out = Vec::new();
    for x in coders {
        let o: Vec<f64> = codes.iter().map(|c| obs(x, c, codes)).collect();

        let total: f64 = score.iter().sum();
        let mut covered = 0.0;
        for i in 0..codes.len() {
            covered += o[i] * score[i];
        }
        let coverage = covered / total;

        // what everyone x does not stand for contributes; summed directly so
        // a group of everyone gets an exact zero instead of rounding residue
        let mut baseline = vec![0.0; codes.len()];
        for y in coders.iter().filter(|c| !c.is_group) {
            if !x.stands_for.contains(&y.id) {
                for (i, c) in codes.iter().enumerate() {
                    baseline[i] += obs(y, c, codes) * weight(y);
                }
            }
        }
        let b_total: f64 = baseline.iter().sum();
        let overlap = if b_total > 0.0 {
            let mut s = 0.0;
            for i in 0..codes.len() {
                s += o[i] * baseline[i];
            }
            Some(s / b_total)
        } else {
            None
        };

        let mut novel_total = 0.0;
        let mut novel_own = 0.0;
        for (i, c) in codes.iter().enumerate() {
            let mut distinct = c.owners.clone();
            distinct.sort();
            distinct.dedup();
            if distinct.len() == 1 {
                novel_total += score[i];
                if owns(x, c) {
                    novel_own += o[i] * score[i];
                }
            }
        }
        let novelty = if novel_total > 0.0 {
            novel_own / novel_total
        } else {
            0.0
        };

        let o_total: f64 = o.iter().sum();
        let divergence = if b_total > 0.0 && o_total > 0.0 {
            let p: Vec<f64> = baseline.iter().map(|b| b / b_total).collect();
            let q: Vec<f64> = o.iter().map(|v| v / o_total).collect();
            Some(jsd_bits(&p, &q).max(0.0).sqrt())
        } else {
            None
        };

        out.push(OracleMetrics {
            coverage,
            overlap,
            novelty,
            divergence,
        });
    }
    out
}
