//! Density-based clustering with brute-force region queries, plus the
//! noise policy that turns its output into a total partition.

use std::collections::VecDeque;

use super::{nearest_centroid, Deadline};
use crate::core::{canonicalize, sq_dist, Matrix, Partition};
use crate::Result;

/// Raw DBSCAN labeling: -1 for noise, otherwise cluster ids in discovery
/// order. Also returns the core flags. Neighborhoods are Euclidean eps
/// balls and include the point itself; clusters grow breadth-first from
/// core points in ascending index order, so a border point joins the first
/// cluster that reaches it.
fn label_clusters(
    features: &Matrix,
    eps: f64,
    min_samples: usize,
    deadline: Deadline,
) -> Result<(Vec<i64>, Vec<bool>)> {
    let n = features.nrows();
    let eps2 = eps * eps;
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        if i % 64 == 0 {
            deadline.check()?;
        }
        let ri = features.row(i);
        neighbors.push(
            (0..n)
                .filter(|&j| sq_dist(ri, features.row(j)) <= eps2)
                .collect(),
        );
    }
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut labels = vec![-1i64; n];
    let mut next_cluster = 0i64;
    for i in 0..n {
        if !core[i] || labels[i] != -1 {
            continue;
        }
        labels[i] = next_cluster;
        let mut queue = VecDeque::from([i]);
        while let Some(j) = queue.pop_front() {
            deadline.check()?;
            for &q in &neighbors[j] {
                if labels[q] == -1 {
                    labels[q] = next_cluster;
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        next_cluster += 1;
    }
    Ok((labels, core))
}

/// DBSCAN as a total partition. Noise handling: with at least one cluster
/// present, every noise point is reassigned to the cluster with the
/// nearest centroid; with none, every point becomes its own singleton.
pub fn dbscan(
    features: &Matrix,
    eps: f64,
    min_samples: usize,
    deadline: Deadline,
) -> Result<Partition> {
    let (mut labels, _) = label_clusters(features, eps, min_samples, deadline)?;
    let clusters = labels.iter().map(|&l| l + 1).max().unwrap_or(0) as usize;
    if clusters > 0 {
        let n = features.nrows();
        let p = features.ncols();
        let mut centroids = vec![vec![0.0; p]; clusters];
        let mut counts = vec![0usize; clusters];
        for i in 0..n {
            if labels[i] >= 0 {
                let c = labels[i] as usize;
                counts[c] += 1;
                for (m, &v) in centroids[c].iter_mut().zip(features.row(i)) {
                    *m += v;
                }
            }
        }
        for (centroid, &count) in centroids.iter_mut().zip(&counts) {
            for m in centroid.iter_mut() {
                *m /= count as f64;
            }
        }
        for i in 0..n {
            if labels[i] == -1 {
                labels[i] = nearest_centroid(features.row(i), &centroids) as i64;
            }
        }
    }
    canonicalize(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_with_outlier() -> Matrix {
        // Two tight pairs far apart plus one straggler near the first pair.
        Matrix::from_rows(&[
            vec![0.0],
            vec![0.5],
            vec![10.0],
            vec![10.5],
            vec![3.0],
        ])
        .unwrap()
    }

    #[test]
    fn finds_dense_groups_and_reassigns_noise() {
        let p = dbscan(&line_with_outlier(), 1.0, 2, Deadline::none()).unwrap();
        // Pairs form two clusters; the straggler joins the nearer centroid.
        assert_eq!(p.assignments(), &[0, 0, 1, 1, 0]);
    }

    #[test]
    fn all_noise_becomes_singletons() {
        let p = dbscan(&line_with_outlier(), 0.1, 2, Deadline::none()).unwrap();
        assert_eq!(p.k(), 5);
        assert_eq!(p.assignments(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn huge_eps_gives_one_cluster() {
        let p = dbscan(&line_with_outlier(), 100.0, 2, Deadline::none()).unwrap();
        assert_eq!(p.k(), 1);
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // Index 3 sits within eps of core points of both groups (indices 2
        // and 4) without being core itself; the lower-id cluster claims it.
        let m = Matrix::from_rows(&[
            vec![-0.8],
            vec![-0.4],
            vec![0.0],
            vec![1.0],
            vec![2.0],
            vec![2.4],
            vec![2.8],
        ])
        .unwrap();
        let (raw, core) = label_clusters(&m, 1.1, 4, Deadline::none()).unwrap();
        assert!(!core[3] && raw[3] == 0);
        assert!(core[2] && core[4]);
        let p = dbscan(&m, 1.1, 4, Deadline::none()).unwrap();
        assert_eq!(p.k(), 2);
        assert_eq!(p.assignments()[3], p.assignments()[2]);
        assert_ne!(p.assignments()[3], p.assignments()[4]);
    }

    #[test]
    fn clusters_and_core_flags_match_brute_force() {
        // Deterministic scatter, checked point by point against direct
        // neighborhood counting with an independent distance formula.
        let rows: Vec<Vec<f64>> = (0..150)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.713).sin() * 3.0, (t * 1.171).cos() * 3.0]
            })
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let n = m.nrows();
        let eps = 0.8;
        let min_samples = 4;

        let euclid = |a: &[f64], b: &[f64]| {
            (a[0] - b[0]).hypot(a[1] - b[1])
        };
        let brute_core: Vec<bool> = (0..n)
            .map(|i| {
                (0..n).filter(|&j| euclid(m.row(i), m.row(j)) <= eps).count() >= min_samples
            })
            .collect();
        assert!(brute_core.iter().any(|&c| c), "scatter too sparse for the check");
        assert!(brute_core.iter().any(|&c| !c), "scatter too dense for the check");

        let (raw, core) = label_clusters(&m, eps, min_samples, Deadline::none()).unwrap();
        assert_eq!(core, brute_core);

        let clusters = raw.iter().map(|&l| l + 1).max().unwrap() as usize;
        assert!(clusters >= 1);
        for c in 0..clusters as i64 {
            // Every cluster contains a core point.
            assert!((0..n).any(|i| raw[i] == c && core[i]));
            // Every border member is within eps of a core member of the
            // same cluster.
            for i in 0..n {
                if raw[i] == c && !core[i] {
                    assert!((0..n).any(|j| {
                        raw[j] == c && core[j] && euclid(m.row(i), m.row(j)) <= eps
                    }));
                }
            }
        }
        // The noise policy reassigns into existing clusters, so the final
        // partition keeps the cluster count and the row count.
        let p = dbscan(&m, eps, min_samples, Deadline::none()).unwrap();
        assert_eq!(p.n(), n);
        assert_eq!(p.k(), clusters);
    }
}
