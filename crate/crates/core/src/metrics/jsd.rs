/// Scales a non-negative vector to sum to 1. `None` when it sums to 0.
pub fn normalize_distribution(values: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 || !total.is_finite() {
        return None;
    }
    Some(values.iter().map(|v| v.max(0.0) / total).collect())
}

/// Jensen-Shannon divergence in bits between two probability vectors.
/// Zero entries contribute nothing, so disjoint supports give exactly 1.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions differ in length");
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    total.max(0.0)
}
