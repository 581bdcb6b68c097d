//! Seeded Lloyd's k-means with k-means++ initialization.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::vector::squared_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum KMeansError {
    #[error("no points to cluster")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the number of points ({n})")]
    TooManyClusters { k: usize, n: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimMismatch { index: usize, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Independent k-means++ restarts; the lowest final objective wins.
    pub n_init: usize,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 100,
            seed,
            n_init: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub objective: f64,
    /// Objective after every assignment step of the winning restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn kmeans<P: AsRef<[f64]>>(points: &[P], params: &KMeansParams) -> Result<KMeansResult, KMeansError> {
    let n = points.len();
    if n == 0 {
        return Err(KMeansError::Empty);
    }
    if params.k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if params.k > n {
        return Err(KMeansError::TooManyClusters { k: params.k, n });
    }
    let dim = points[0].as_ref().len();
    for (index, p) in points.iter().enumerate() {
        let found = p.as_ref().len();
        if found != dim {
            return Err(KMeansError::DimMismatch {
                index,
                expected: dim,
                found,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..params.n_init.max(1) {
        let run = lloyd(points, params.k, params.max_iter.max(1), &mut rng);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].as_ref().to_vec()];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p.as_ref(), &centroids[0])).collect();

    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just past the final sum.
            pick.unwrap_or_else(|| dist.iter().rposition(|d| *d > 0.0).expect("total > 0"))
        } else {
            // Every remaining point coincides with a centroid.
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[pick] = true;
        let centroid = points[pick].as_ref().to_vec();
        for (d, p) in dist.iter_mut().zip(points) {
            let nd = squared_distance(p.as_ref(), &centroid);
            if nd < *d {
                *d = nd;
            }
        }
        centroids.push(centroid);
    }
    centroids
}

fn lloyd<P: AsRef<[f64]>>(points: &[P], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let n = points.len();
    let dim = points[0].as_ref().len();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut distances = vec![0.0f64; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    loop {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p.as_ref(), &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            distances[i] = d;
        }
        trace.push(distances.iter().sum());
        if !changed {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *dst = s / inv;
                }
            }
        }
        // Empty clusters take over the point farthest from its centroid,
        // drawn from clusters that can spare a member.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(b.cmp(&a)));
            if let Some(i) = donor {
                counts[assignments[i]] -= 1;
                counts[c] += 1;
                distances[i] = 0.0;
                centroids[c] = points[i].as_ref().to_vec();
            }
        }
    }

    KMeansResult {
        objective: *trace.last().expect("at least one iteration"),
        assignments,
        centroids,
        trace,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let r = kmeans(&pts, &KMeansParams::new(1, 3)).unwrap();
        assert!(r.converged);
        assert!((r.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((r.centroids[0][1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_objective() {
        let pts = vec![vec![0.0], vec![5.0], vec![-2.0], vec![9.5]];
        let r = kmeans(&pts, &KMeansParams::new(4, 11)).unwrap();
        assert_eq!(r.objective, 0.0);
        let mut seen = r.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn two_well_separated_groups() {
        // Best 2-partition of {0,1,10,11} by SSE is {0,1} | {10,11}: 0.5 + 0.5 = 1.0.
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let r = kmeans(&pts, &KMeansParams::new(2, 5)).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        let mut cents: Vec<f64> = r.centroids.iter().map(|c| c[0]).collect();
        cents.sort_by(f64::total_cmp);
        assert_eq!(cents, vec![0.5, 10.5]);
        assert!((r.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_share_a_cluster() {
        let pts = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        for seed in 0..20 {
            let r = kmeans(&pts, &KMeansParams::new(3, seed)).unwrap();
            assert_eq!(r.assignments[0], r.assignments[1]);
        }
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert_eq!(kmeans(&empty, &KMeansParams::new(1, 0)), Err(KMeansError::Empty));
        let pts = vec![vec![0.0], vec![1.0]];
        assert_eq!(
            kmeans(&pts, &KMeansParams::new(3, 0)),
            Err(KMeansError::TooManyClusters { k: 3, n: 2 })
        );
        assert_eq!(kmeans(&pts, &KMeansParams::new(0, 0)), Err(KMeansError::ZeroK));
        let ragged = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(matches!(
            kmeans(&ragged, &KMeansParams::new(1, 0)),
            Err(KMeansError::DimMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn duplicates_beyond_distinct_count_do_not_panic() {
        let pts = vec![vec![1.0]; 6];
        let r = kmeans(&pts, &KMeansParams::new(4, 9)).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.assignments.len(), 6);
    }

    #[test]
    fn same_seed_same_result() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 13) as f64, (i * 3 % 11) as f64]).collect();
        let a = kmeans(&pts, &KMeansParams::new(5, 42)).unwrap();
        let b = kmeans(&pts, &KMeansParams::new(5, 42)).unwrap();
        assert_eq!(a, b);
    }
}
