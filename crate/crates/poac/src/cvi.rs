//! Clustering validity indexes.
//!
//! Internal indexes (computed from geometry alone): silhouette and
//! Davies-Bouldin. External indexes (computed against a reference
//! partition): Rand index and adjusted Rand index. All distances are
//! Euclidean.

use std::collections::HashMap;

use crate::core::{dist, Dataset, PairwiseDistances, Partition};
use crate::{Error, Result};

/// Internal validity scores of one partition, with NaN standing in for
/// undefined or non-finite values so rows stay storable and imputable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CviScores {
    pub sil: f64,
    pub dbs: f64,
}

impl CviScores {
    /// Measures both internal indexes, mapping undefined or infinite
    /// results to NaN. `pd` must be the pairwise distances of
    /// `dataset.features()`.
    pub fn measure(dataset: &Dataset, partition: &Partition, pd: &PairwiseDistances) -> CviScores {
        let sil = match silhouette_from_distances(pd, partition) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NAN,
        };
        let dbs = match davies_bouldin(dataset, partition) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NAN,
        };
        CviScores { sil, dbs }
    }
}

fn check_lengths(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeError {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Mean silhouette width: per point, (b - a) / max(a, b) where a is the mean
/// distance to the point's own cluster and b the smallest mean distance to
/// any other cluster. Points in singleton clusters contribute 0.
pub fn silhouette(dataset: &Dataset, partition: &Partition) -> Result<f64> {
    check_lengths("partition length", dataset.n(), partition.n())?;
    let pd = PairwiseDistances::compute(dataset.features());
    silhouette_from_distances(&pd, partition)
}

/// Silhouette from a precomputed distance matrix; lets callers amortize the
/// O(n^2) distance work across many partitions of the same dataset.
pub fn silhouette_from_distances(pd: &PairwiseDistances, partition: &Partition) -> Result<f64> {
    let n = partition.n();
    check_lengths("partition length", pd.n(), n)?;
    let k = partition.k();
    if k < 2 || k > n - 1 {
        return Err(Error::UndefinedCvi(format!(
            "silhouette needs 2 <= k <= n-1, got k={k}, n={n}"
        )));
    }
    let sizes = partition.cluster_sizes();
    let assignments = partition.assignments();

    let mut total = 0.0;
    let mut sums = vec![0.0f64; k];
    for i in 0..n {
        for s in sums.iter_mut() {
            *s = 0.0;
        }
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += pd.get(i, j);
            }
        }
        let own = assignments[i];
        if sizes[own] == 1 {
            continue; // defined as contributing 0
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c != own {
                let mean = sums[c] / sizes[c] as f64;
                if mean < b {
                    b = mean;
                }
            }
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Davies-Bouldin score: mean over clusters of the worst-case ratio
/// (sigma_I + sigma_K) / d(C_I, C_K), where sigma is the mean distance of
/// members to their centroid. Lower is better. Coincident centroids with
/// nonzero scatter yield +inf; the fully degenerate 0/0 case is undefined.
pub fn davies_bouldin(dataset: &Dataset, partition: &Partition) -> Result<f64> {
    let n = dataset.n();
    check_lengths("partition length", n, partition.n())?;
    let k = partition.k();
    if k < 2 {
        return Err(Error::UndefinedCvi(format!(
            "davies-bouldin needs k >= 2, got k={k}"
        )));
    }
    let p = dataset.p();
    let features = dataset.features();
    let sizes = partition.cluster_sizes();

    let mut centroids = vec![vec![0.0f64; p]; k];
    for (i, &c) in partition.assignments().iter().enumerate() {
        let row = features.row(i);
        for (acc, &v) in centroids[c].iter_mut().zip(row) {
            *acc += v;
        }
    }
    for (c, centroid) in centroids.iter_mut().enumerate() {
        for v in centroid.iter_mut() {
            *v /= sizes[c] as f64;
        }
    }

    let mut sigma = vec![0.0f64; k];
    for (i, &c) in partition.assignments().iter().enumerate() {
        sigma[c] += dist(features.row(i), &centroids[c]);
    }
    for (c, s) in sigma.iter_mut().enumerate() {
        *s /= sizes[c] as f64;
    }

    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = dist(&centroids[i], &centroids[j]);
            let scatter = sigma[i] + sigma[j];
            let ratio = if d > 0.0 {
                scatter / d
            } else if scatter > 0.0 {
                f64::INFINITY
            } else {
                return Err(Error::UndefinedCvi(
                    "coincident centroids with zero scatter (0/0)".to_string(),
                ));
            };
            if ratio > worst {
                worst = ratio;
            }
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Pair-count sums from the contingency table of two partitions:
/// (sum_ij C(n_ij,2), sum_i C(a_i,2), sum_j C(b_j,2), C(n,2)).
fn pair_sums(u: &Partition, v: &Partition) -> (f64, f64, f64, f64) {
    let n = u.n();
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    for i in 0..n {
        *table
            .entry((u.assignments()[i], v.assignments()[i]))
            .or_insert(0) += 1;
    }
    let mut row_marginals = vec![0u64; u.k()];
    let mut col_marginals = vec![0u64; v.k()];
    let mut same_both = 0.0;
    for (&(r, c), &count) in &table {
        row_marginals[r] += count;
        col_marginals[c] += count;
        same_both += comb2(count);
    }
    let same_u: f64 = row_marginals.iter().map(|&m| comb2(m)).sum();
    let same_v: f64 = col_marginals.iter().map(|&m| comb2(m)).sum();
    (same_both, same_u, same_v, comb2(n as u64))
}

#[inline]
fn comb2(m: u64) -> f64 {
    (m as f64) * (m.saturating_sub(1) as f64) / 2.0
}

/// Rand index: fraction of point pairs on which the two partitions agree
/// (together in both, or separated in both). Range [0, 1].
pub fn rand_index(u: &Partition, v: &Partition) -> Result<f64> {
    check_lengths("partition pair length", u.n(), v.n())?;
    let (same_both, same_u, same_v, total) = pair_sums(u, v);
    // Pairs separated in both = total - pairs joined in u - pairs joined in v
    // + pairs joined in both (inclusion-exclusion).
    let agree = same_both + (total - same_u - same_v + same_both);
    Ok(agree / total)
}

/// Adjusted Rand index: Rand index corrected for chance agreement via the
/// hypergeometric expectation. Range [-1, 1]; 1 iff the partitions are
/// identical up to relabeling. The degenerate denominator (both partitions
/// trivial in the same way) is defined as perfect agreement, 1.0.
pub fn adjusted_rand_index(u: &Partition, v: &Partition) -> Result<f64> {
    check_lengths("partition pair length", u.n(), v.n())?;
    let (same_both, same_u, same_v, total) = pair_sums(u, v);
    // Clearing denominators keeps every term an exactly representable
    // integer (n <= 5000 stays far below 2^53), so small cases are exact.
    let numerator = 2.0 * (same_both * total - same_u * same_v);
    let denominator = total * (same_u + same_v) - 2.0 * same_u * same_v;
    if denominator == 0.0 {
        return Ok(1.0);
    }
    Ok(numerator / denominator)
}
