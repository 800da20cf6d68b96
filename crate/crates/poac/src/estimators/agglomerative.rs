//! Ward-linkage agglomerative clustering: nearest-neighbor-chain
//! agglomeration with Lance-Williams cost updates, cut at the requested
//! cluster count.

use super::Deadline;
use crate::core::{canonicalize, sq_dist, Matrix, Partition};
use crate::{Error, Result};

/// Condensed symmetric matrix over cluster slots 0..n-1. Ward merge costs
/// (the increase in within-cluster sum of squares) live here.
struct CostMatrix {
    n: usize,
    d: Vec<f64>,
}

impl CostMatrix {
    fn initial(features: &Matrix) -> Self {
        let n = features.nrows();
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            let ri = features.row(i);
            for j in (i + 1)..n {
                // Ward cost of merging two singletons.
                d.push(sq_dist(ri, features.row(j)) / 2.0);
            }
        }
        CostMatrix { n, d }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j);
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * self.n - a * (a + 1) / 2 + (b - a - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.d[at] = v;
    }
}

/// One agglomeration event: the two slots merged and the Ward cost.
struct Merge {
    a: usize,
    b: usize,
    height: f64,
}

/// Runs the nearest-neighbor chain to completion, returning all n-1 merges.
/// Ward linkage is reducible, so chain merges replayed in cost order give
/// the same hierarchy as globally greedy agglomeration.
fn chain_merges(features: &Matrix, deadline: Deadline) -> Result<Vec<Merge>> {
    let n = features.nrows();
    let mut costs = CostMatrix::initial(features);
    let mut size = vec![1.0f64; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::new();
    let mut merges = Vec::with_capacity(n - 1);
    while merges.len() < n - 1 {
        deadline.check()?;
        if chain.is_empty() {
            let start = (0..n).find(|&i| active[i]).expect("merges remain");
            chain.push(start);
        }
        loop {
            let top = *chain.last().expect("chain non-empty");
            // Nearest active neighbor; seeding with the chain predecessor
            // makes ties close the chain, which guarantees termination.
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            let mut best = prev;
            let mut best_cost = prev.map_or(f64::INFINITY, |p| costs.get(top, p));
            for c in 0..n {
                if !active[c] || c == top || Some(c) == prev {
                    continue;
                }
                let cost = costs.get(top, c);
                if cost < best_cost {
                    best_cost = cost;
                    best = Some(c);
                }
            }
            let best = best.expect("at least two active clusters");
            if Some(best) != prev {
                chain.push(best);
                continue;
            }

            // Reciprocal pair: merge into the lower slot.
            let (keep, drop) = if top < best { (top, best) } else { (best, top) };
            let height = best_cost;
            debug_assert!(height.is_finite() && height >= -1e-9);
            let merged_size = size[keep] + size[drop];
            for c in 0..n {
                if !active[c] || c == keep || c == drop {
                    continue;
                }
                let updated = ((size[keep] + size[c]) * costs.get(keep, c)
                    + (size[drop] + size[c]) * costs.get(drop, c)
                    - size[c] * height)
                    / (merged_size + size[c]);
                costs.set(keep, c, updated);
            }
            size[keep] = merged_size;
            active[drop] = false;
            chain.pop();
            chain.pop();
            merges.push(Merge {
                a: keep,
                b: drop,
                height,
            });
            break;
        }
    }
    Ok(merges)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[rb] = ra;
        }
    }
}

/// Ward agglomerative clustering cut at n_clusters.
pub fn ward(features: &Matrix, n_clusters: usize, deadline: Deadline) -> Result<Partition> {
    let n = features.nrows();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::InfeasibleK { k: n_clusters, n });
    }
    let mut merges = chain_merges(features, deadline)?;
    // Stable sort keeps discovery order for equal heights.
    merges.sort_by(|x, y| x.height.total_cmp(&y.height));
    debug_assert!(merges.windows(2).all(|w| w[0].height <= w[1].height));

    // Each cluster slot always contains its own point index, so replaying
    // merges as point unions reconstructs the cut.
    let mut uf = UnionFind::new(n);
    for m in merges.iter().take(n - n_clusters) {
        uf.union(m.a, m.b);
    }
    let labels: Vec<i64> = (0..n).map(|i| uf.find(i) as i64).collect();
    canonicalize(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::RngStream;
    use rand_distr::{Distribution, StandardNormal};

    /// Globally greedy Ward agglomeration from cluster member lists; the
    /// cost is computed directly from centroids, independent of the
    /// Lance-Williams recursion.
    fn greedy_ward(features: &Matrix, n_clusters: usize) -> Vec<i64> {
        let n = features.nrows();
        let p = features.ncols();
        let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
        let centroid = |members: &[usize]| -> Vec<f64> {
            let mut c = vec![0.0; p];
            for &i in members {
                for (cv, &x) in c.iter_mut().zip(features.row(i)) {
                    *cv += x;
                }
            }
            for cv in c.iter_mut() {
                *cv /= members.len() as f64;
            }
            c
        };
        for _ in 0..(n - n_clusters) {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..n {
                let Some(a) = &clusters[i] else { continue };
                let ca = centroid(a);
                for j in (i + 1)..n {
                    let Some(b) = &clusters[j] else { continue };
                    let cb = centroid(b);
                    let (na, nb) = (a.len() as f64, b.len() as f64);
                    let cost = na * nb / (na + nb) * sq_dist(&ca, &cb);
                    if cost < best.0 {
                        best = (cost, i, j);
                    }
                }
            }
            let absorbed = clusters[best.2].take().expect("chosen cluster exists");
            clusters[best.1]
                .as_mut()
                .expect("chosen cluster exists")
                .extend(absorbed);
        }
        let mut labels = vec![0i64; n];
        for (id, members) in clusters.iter().flatten().enumerate() {
            for &i in members {
                labels[i] = id as i64;
            }
        }
        labels
    }

    fn random_features(n: usize, p: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed).rng();
        Matrix::from_rows(
            &(0..n)
                .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect::<Vec<Vec<f64>>>(),
        )
        .unwrap()
    }

    #[test]
    fn matches_greedy_agglomeration() {
        for seed in [1, 2, 3] {
            let m = random_features(40, 3, seed);
            for k in [2, 3, 5, 10] {
                let fast = ward(&m, k, Deadline::none()).unwrap();
                let slow = canonicalize(&greedy_ward(&m, k)).unwrap();
                assert_eq!(fast, slow, "seed {seed}, k {k}");
            }
        }
    }

    #[test]
    fn separated_blobs_recovered() {
        let mut rows = Vec::new();
        for c in 0..3 {
            for i in 0..20 {
                let jitter = (i as f64 * 0.47).sin() * 0.3;
                rows.push(vec![c as f64 * 10.0 + jitter, jitter]);
            }
        }
        let m = Matrix::from_rows(&rows).unwrap();
        let p = ward(&m, 3, Deadline::none()).unwrap();
        assert_eq!(p.k(), 3);
        for c in 0..3 {
            let block = &p.assignments()[c * 20..(c + 1) * 20];
            assert!(block.iter().all(|&x| x == block[0]));
        }
    }

    #[test]
    fn merge_heights_are_monotone_after_sorting() {
        let m = random_features(60, 4, 9);
        let mut merges = chain_merges(&m, Deadline::none()).unwrap();
        assert_eq!(merges.len(), 59);
        assert!(merges.iter().all(|m| m.height.is_finite() && m.height >= 0.0));
        merges.sort_by(|x, y| x.height.total_cmp(&y.height));
        assert!(merges.windows(2).all(|w| w[0].height <= w[1].height));
    }

    #[test]
    fn k_boundaries() {
        let m = random_features(8, 2, 4);
        assert_eq!(ward(&m, 1, Deadline::none()).unwrap().k(), 1);
        assert_eq!(ward(&m, 8, Deadline::none()).unwrap().k(), 8);
        assert!(matches!(
            ward(&m, 9, Deadline::none()),
            Err(Error::InfeasibleK { .. })
        ));
    }

    #[test]
    fn deterministic() {
        let m = random_features(50, 3, 12);
        assert_eq!(
            ward(&m, 4, Deadline::none()).unwrap(),
            ward(&m, 4, Deadline::none()).unwrap()
        );
    }
}
