//! Near-duplicate detection over embedded questions.

use alloc::vec::Vec;

use crate::vector::{cosine, Vector};

/// Default cosine above which two suggestions count as the same question.
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.90;

/// Cosine, with undefined pairs (zero vectors, mismatched dims) treated as
/// unrelated.
pub fn similarity(a: &Vector, b: &Vector) -> f64 {
    cosine(a, b).unwrap_or(f64::NEG_INFINITY)
}

/// True when `v` is strictly above `threshold` to any of `others`.
pub fn near_any<'a>(v: &Vector, others: impl IntoIterator<Item = &'a Vector>, threshold: f64) -> bool {
    others.into_iter().any(|o| similarity(v, o) > threshold)
}

/// Keep-mask for an ordered list: an item survives when it is not above
/// `threshold` to any earlier survivor. Earlier items win collisions.
pub fn greedy_keep(items: &[&Vector], threshold: f64) -> Vec<bool> {
    let mut kept: Vec<&Vector> = Vec::with_capacity(items.len());
    items
        .iter()
        .map(|v| {
            let keep = !near_any(v, kept.iter().copied(), threshold);
            if keep {
                kept.push(v);
            }
            keep
        })
        .collect()
}
