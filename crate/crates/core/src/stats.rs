//! Nearest-rank percentiles over latency samples.

use alloc::vec::Vec;

/// Nearest-rank percentile of `sorted` (ascending): the value at 1-based
/// rank `ceil(q * n)`, clamped to `[1, n]`.
pub fn nearest_rank<T: Copy>(sorted: &[T], q: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = libm::ceil(q.clamp(0.0, 1.0) * n as f64) as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

/// p50/p95/max of a sample set, in the samples' unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LatencySummary {
    pub count: usize,
    pub p50: u64,
    pub p95: u64,
    pub max: u64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[u64]) -> Self {
        let mut sorted: Vec<u64> = samples.to_vec();
        sorted.sort_unstable();
        Self {
            count: sorted.len(),
            p50: nearest_rank(&sorted, 0.50).unwrap_or(0),
            p95: nearest_rank(&sorted, 0.95).unwrap_or(0),
            max: sorted.last().copied().unwrap_or(0),
        }
    }
}
