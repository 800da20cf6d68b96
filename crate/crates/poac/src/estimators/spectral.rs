//! Spectral clustering: affinity graph, symmetric normalized Laplacian,
//! dense eigendecomposition, k-means on the row-normalized embedding.

use nalgebra::DMatrix;

use super::kmeans::kmeans;
use super::{Deadline, KMeansInit};
use crate::core::{sq_dist, Matrix, Partition, RngStream};
use crate::{Error, Result};

const KNN: usize = 10;

/// Gaussian affinity exp(-||x_i - x_j||^2 / p).
fn rbf_affinity(features: &Matrix) -> DMatrix<f64> {
    let n = features.nrows();
    let gamma = 1.0 / features.ncols() as f64;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = (-gamma * sq_dist(features.row(i), features.row(j))).exp();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Binary 10-nearest-neighbor graph, OR-symmetrized: an edge exists when
/// either endpoint lists the other. Ties in the neighbor ranking go to the
/// lower index; the diagonal stays zero.
fn knn_affinity(features: &Matrix) -> DMatrix<f64> {
    let n = features.nrows();
    let k = KNN.min(n - 1);
    let mut a = DMatrix::zeros(n, n);
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let ri = features.row(i);
        order.sort_by(|&x, &y| {
            sq_dist(ri, features.row(x))
                .total_cmp(&sq_dist(ri, features.row(y)))
                .then(x.cmp(&y))
        });
        for &j in &order[..k] {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
    }
    a
}

/// Spectral clustering with the symmetric normalized Laplacian
/// L = I - D^{-1/2} A D^{-1/2}: embed rows into the eigenvectors of the k
/// smallest eigenvalues, normalize rows, cluster with k-means.
pub fn spectral(
    features: &Matrix,
    n_clusters: usize,
    affinity: &str,
    stream: RngStream,
    deadline: Deadline,
) -> Result<Partition> {
    let n = features.nrows();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::InfeasibleK { k: n_clusters, n });
    }
    deadline.check()?;
    let a = match affinity {
        "rbf" => rbf_affinity(features),
        _ => knn_affinity(features),
    };
    let d_inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let degree: f64 = a.row(i).sum();
            if degree > 0.0 {
                1.0 / degree.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let laplacian = DMatrix::from_fn(n, n, |i, j| {
        let off = -a[(i, j)] * d_inv_sqrt[i] * d_inv_sqrt[j];
        if i == j {
            1.0 + off
        } else {
            off
        }
    });
    deadline.check()?;
    let eig = nalgebra::SymmetricEigen::try_new(laplacian, 1e-12, 100_000).ok_or_else(|| {
        Error::SolverError("laplacian eigendecomposition did not converge".to_string())
    })?;
    deadline.check()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[x]
            .total_cmp(&eig.eigenvalues[y])
            .then(x.cmp(&y))
    });

    let mut embedding = Matrix::zeros(n, n_clusters);
    for (j, &col) in order[..n_clusters].iter().enumerate() {
        for i in 0..n {
            embedding.set(i, j, eig.eigenvectors[(i, col)]);
        }
    }
    for i in 0..n {
        let row = embedding.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    kmeans(&embedding, n_clusters, KMeansInit::PlusPlus, stream, deadline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::RngStream;

    fn two_rings() -> Matrix {
        // Concentric rings: non-convex clusters where raw k-means fails but
        // the neighbor-graph Laplacian separates cleanly.
        let mut rows = Vec::new();
        for i in 0..40 {
            let t = i as f64 / 40.0 * std::f64::consts::TAU;
            rows.push(vec![t.cos(), t.sin()]);
        }
        for i in 0..40 {
            let t = (i as f64 + 0.5) / 40.0 * std::f64::consts::TAU;
            rows.push(vec![6.0 * t.cos(), 6.0 * t.sin()]);
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn affinities_are_symmetric() {
        let m = two_rings();
        for a in [rbf_affinity(&m), knn_affinity(&m)] {
            for i in 0..m.nrows() {
                for j in 0..m.nrows() {
                    assert!((a[(i, j)] - a[(j, i)]).abs() <= 1e-10);
                }
            }
        }
        let knn = knn_affinity(&m);
        for i in 0..m.nrows() {
            assert_eq!(knn[(i, i)], 0.0);
            assert!(knn.row(i).sum() >= KNN as f64);
        }
    }

    #[test]
    fn laplacian_eigenvalues_in_range() {
        let m = two_rings();
        for affinity in ["rbf", "nearest_neighbors"] {
            let a = match affinity {
                "rbf" => rbf_affinity(&m),
                _ => knn_affinity(&m),
            };
            let n = m.nrows();
            let d_inv_sqrt: Vec<f64> = (0..n)
                .map(|i| 1.0 / a.row(i).sum().sqrt())
                .collect();
            let l = DMatrix::from_fn(n, n, |i, j| {
                let off = -a[(i, j)] * d_inv_sqrt[i] * d_inv_sqrt[j];
                if i == j {
                    1.0 + off
                } else {
                    off
                }
            });
            let eig = nalgebra::SymmetricEigen::new(l);
            for &v in eig.eigenvalues.iter() {
                assert!(v >= -1e-8 && v <= 2.0 + 1e-8, "{affinity}: eigenvalue {v}");
            }
        }
    }

    #[test]
    fn separates_concentric_rings() {
        let m = two_rings();
        let p = spectral(&m, 2, "nearest_neighbors", RngStream::new(5), Deadline::none())
            .unwrap();
        assert_eq!(p.k(), 2);
        let inner = &p.assignments()[..40];
        let outer = &p.assignments()[40..];
        assert!(inner.iter().all(|&c| c == inner[0]));
        assert!(outer.iter().all(|&c| c == outer[0]));
        assert_ne!(inner[0], outer[0]);
    }

    #[test]
    fn rbf_separates_distant_blobs() {
        let mut rows = Vec::new();
        for c in 0..2 {
            for i in 0..25 {
                let jitter = (i as f64 * 0.77).sin() * 0.2;
                rows.push(vec![c as f64 * 8.0 + jitter, jitter * 0.5]);
            }
        }
        let m = Matrix::from_rows(&rows).unwrap();
        let p = spectral(&m, 2, "rbf", RngStream::new(8), Deadline::none()).unwrap();
        assert_eq!(p.k(), 2);
        assert!(p.assignments()[..25].iter().all(|&c| c == p.assignments()[0]));
        assert!(p.assignments()[25..].iter().all(|&c| c == p.assignments()[25]));
    }

    #[test]
    fn deterministic() {
        let m = two_rings();
        let a = spectral(&m, 2, "rbf", RngStream::new(3), Deadline::none()).unwrap();
        let b = spectral(&m, 2, "rbf", RngStream::new(3), Deadline::none()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_k() {
        let m = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            spectral(&m, 4, "rbf", RngStream::new(0), Deadline::none()),
            Err(Error::InfeasibleK { .. })
        ));
    }
}
