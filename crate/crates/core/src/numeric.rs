//! Order-fixed floating point reductions.

/// Pairwise (tree) summation with a fixed split order.
///
/// The result depends only on the input order, never on how work is scheduled,
/// and the error grows as O(log n) instead of O(n).
pub(crate) fn tree_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    tree_sum(&values[..mid]) + tree_sum(&values[mid..])
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    tree_sum(values) / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub(crate) fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    (tree_sum(&sq) / (values.len() - 1) as f64).sqrt()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
