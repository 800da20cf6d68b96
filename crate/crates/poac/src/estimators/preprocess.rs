//! Feature transforms: scalers, row normalizers, low-variance column
//! filtering, PCA, FastICA.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::core::Matrix;
use crate::Result;

/// Per-column affine map to [0, 1]; a constant column maps to 0.
pub fn minmax_scale(features: &Matrix) -> Matrix {
    let (n, p) = (features.nrows(), features.ncols());
    let mut out = Matrix::zeros(n, p);
    for j in 0..p {
        let col = features.column(j);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for (i, &v) in col.iter().enumerate() {
            let scaled = if span > 0.0 { (v - lo) / span } else { 0.0 };
            out.set(i, j, scaled);
        }
    }
    out
}

fn column_mean_var(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Per-column (x - mean) / sd with population sd; a constant column maps
/// to 0.
pub fn standard_scale(features: &Matrix) -> Matrix {
    let (n, p) = (features.nrows(), features.ncols());
    let mut out = Matrix::zeros(n, p);
    for j in 0..p {
        let col = features.column(j);
        let (mean, var) = column_mean_var(&col);
        let sd = var.sqrt();
        for (i, &v) in col.iter().enumerate() {
            let scaled = if sd > 0.0 { (v - mean) / sd } else { 0.0 };
            out.set(i, j, scaled);
        }
    }
    out
}

/// Scales each row to unit L1 or L2 norm; a zero row is left unchanged.
pub fn normalize_rows(features: &Matrix, norm: &str) -> Matrix {
    let mut out = features.clone();
    for i in 0..out.nrows() {
        let row = out.row_mut(i);
        let len = match norm {
            "l1" => row.iter().map(|v| v.abs()).sum::<f64>(),
            _ => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        if len > 0.0 {
            for v in row.iter_mut() {
                *v /= len;
            }
        }
    }
    out
}

/// Drops columns whose population variance is at most `threshold`. If that
/// would drop everything, the single highest-variance column survives
/// (lowest index on ties).
pub fn variance_threshold(features: &Matrix, threshold: f64) -> Matrix {
    let p = features.ncols();
    let variances: Vec<f64> = (0..p)
        .map(|j| column_mean_var(&features.column(j)).1)
        .collect();
    let mut keep: Vec<usize> = (0..p).filter(|&j| variances[j] > threshold).collect();
    if keep.is_empty() {
        let best = (0..p)
            .max_by(|&a, &b| variances[a].total_cmp(&variances[b]).then(b.cmp(&a)))
            .expect("at least one column");
        keep.push(best);
    }
    features.select_columns(&keep)
}

pub(crate) fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.nrows(), m.ncols(), m.as_slice())
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.set(i, j, m[(i, j)]);
        }
    }
    out
}

fn center_columns(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mean = m.column(j).sum() / m.nrows() as f64;
        for i in 0..m.nrows() {
            m[(i, j)] -= mean;
        }
    }
}

/// Eigendecomposition of the sample covariance, eigenpairs sorted by
/// eigenvalue descending (index ascending on ties).
fn covariance_eigenpairs(centered: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = centered.nrows() as f64;
    let denom = if n > 1.0 { n - 1.0 } else { 1.0 };
    let cov = centered.transpose() * centered / denom;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let p = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(&order);
    (values, vectors)
}

/// Flips each column so its largest-magnitude entry is positive, making
/// the eigenbasis orientation deterministic.
fn fix_signs(vectors: &mut DMatrix<f64>) {
    for j in 0..vectors.ncols() {
        let mut lead = 0.0f64;
        for i in 0..vectors.nrows() {
            if vectors[(i, j)].abs() > lead.abs() {
                lead = vectors[(i, j)];
            }
        }
        if lead < 0.0 {
            for i in 0..vectors.nrows() {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
}

fn clip_components(requested: usize, n: usize, p: usize) -> usize {
    requested.min(p).min(n.saturating_sub(1)).max(1)
}

/// Projects onto the top principal components of the column-centered data.
pub fn pca(features: &Matrix, n_components: usize) -> Matrix {
    let c = clip_components(n_components, features.nrows(), features.ncols());
    let mut x = to_dmatrix(features);
    center_columns(&mut x);
    let (_, vectors) = covariance_eigenpairs(&x);
    let mut basis = vectors.columns(0, c).into_owned();
    fix_signs(&mut basis);
    from_dmatrix(&(x * basis))
}

/// Inverse square root of a symmetric positive semi-definite matrix, with
/// eigenvalues floored away from zero.
fn inv_sqrt_symmetric(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(m);
    let scaled = DMatrix::from_fn(eig.eigenvectors.nrows(), eig.eigenvectors.ncols(), |i, j| {
        eig.eigenvectors[(i, j)] / eig.eigenvalues[j].max(1e-12).sqrt()
    });
    &scaled * eig.eigenvectors.transpose()
}

const ICA_MAX_ITER: usize = 200;
const ICA_TOL: f64 = 1e-4;

/// Parallel FastICA with the logcosh contrast on whitened input. Runs at
/// most 200 fixed-point iterations and returns the current estimate even
/// without convergence.
pub fn fast_ica(features: &Matrix, n_components: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let c = clip_components(n_components, features.nrows(), features.ncols());
    let mut x = to_dmatrix(features);
    center_columns(&mut x);

    // Whiten: project onto the top c eigendirections and rescale each to
    // unit variance. Floored eigenvalues keep rank-deficient inputs finite.
    let (values, vectors) = covariance_eigenpairs(&x);
    let whitener = DMatrix::from_fn(x.ncols(), c, |i, j| {
        vectors[(i, j)] / values[j].max(1e-12).sqrt()
    });
    let xw = x * whitener;
    let n = xw.nrows() as f64;

    let mut w = DMatrix::from_fn(c, c, |_, _| StandardNormal.sample(rng));
    w = inv_sqrt_symmetric(&w * w.transpose()) * &w;
    for _ in 0..ICA_MAX_ITER {
        // One fixed-point step for every component in parallel:
        // w_i <- E[x g(w_i.x)] - E[g'(w_i.x)] w_i with g = tanh.
        let s = &xw * w.transpose();
        let g = s.map(f64::tanh);
        let g_prime_mean =
            DVector::from_fn(c, |j, _| g.column(j).map(|v| 1.0 - v * v).sum() / n);
        let mut w_next = (g.transpose() * &xw) / n;
        for i in 0..c {
            for j in 0..c {
                w_next[(i, j)] -= g_prime_mean[i] * w[(i, j)];
            }
        }
        w_next = inv_sqrt_symmetric(&w_next * w_next.transpose()) * &w_next;

        let drift = (0..c)
            .map(|i| ((&w_next * w.transpose())[(i, i)].abs() - 1.0).abs())
            .fold(0.0f64, f64::max);
        w = w_next;
        if drift < ICA_TOL {
            break;
        }
    }
    Ok(from_dmatrix(&(xw * w.transpose())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{dist, RngStream};
    use approx::assert_abs_diff_eq;

    fn three_by_two() -> Matrix {
        Matrix::from_rows(&[vec![2.0, 1.0], vec![4.0, 1.0], vec![6.0, 1.0]]).unwrap()
    }

    #[test]
    fn minmax_maps_to_unit_interval() {
        let out = minmax_scale(&three_by_two());
        assert_eq!(out.column(0), vec![0.0, 0.5, 1.0]);
        // Constant column collapses to 0.
        assert_eq!(out.column(1), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn standard_scale_centers_and_scales() {
        let out = standard_scale(&three_by_two());
        let col = out.column(0);
        let (mean, var) = column_mean_var(&col);
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-9);
        assert_eq!(out.column(1), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalizer_unit_norms() {
        let m = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0], vec![-2.0, 2.0]]).unwrap();
        let l2 = normalize_rows(&m, "l2");
        assert_abs_diff_eq!(l2.get(0, 0), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(l2.get(0, 1), 0.8, epsilon = 1e-12);
        assert_eq!(l2.row(1), &[0.0, 0.0]);
        let l1 = normalize_rows(&m, "l1");
        assert_abs_diff_eq!(l1.get(2, 0), -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(l1.get(2, 1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn variance_threshold_drops_low_variance_columns() {
        // Column variances: 8/3, 0, 2/3.
        let m = Matrix::from_rows(&[
            vec![2.0, 5.0, 1.0],
            vec![4.0, 5.0, 2.0],
            vec![6.0, 5.0, 3.0],
        ])
        .unwrap();
        let kept = variance_threshold(&m, 0.25);
        assert_eq!(kept.ncols(), 2);
        assert_eq!(kept.column(0), m.column(0));
        assert_eq!(kept.column(1), m.column(2));
    }

    #[test]
    fn variance_threshold_keeps_best_column_when_all_drop() {
        let m = Matrix::from_rows(&[vec![1.0, 1.1], vec![1.0, 1.2], vec![1.0, 1.3]]).unwrap();
        let kept = variance_threshold(&m, 0.25);
        assert_eq!(kept.ncols(), 1);
        assert_eq!(kept.column(0), m.column(1));
    }

    #[test]
    fn pca_full_rank_preserves_distances() {
        // c = p on full-rank data is a rotation of the centered cloud.
        let mut rng = RngStream::new(11).rng();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let proj = pca(&m, 3);
        for i in 0..m.nrows() {
            for j in (i + 1)..m.nrows() {
                assert_abs_diff_eq!(
                    dist(proj.row(i), proj.row(j)),
                    dist(m.row(i), m.row(j)),
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn pca_projects_onto_dominant_direction() {
        // Points on the x axis with a tiny y wiggle: the first component
        // recovers x up to centering.
        let m = Matrix::from_rows(&[
            vec![0.0, 0.01],
            vec![1.0, -0.01],
            vec![2.0, 0.01],
            vec![3.0, -0.01],
        ])
        .unwrap();
        let proj = pca(&m, 1);
        assert_eq!(proj.ncols(), 1);
        let col = proj.column(0);
        for w in col.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert_abs_diff_eq!(col[0] + col[3], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn pca_component_count_is_clipped() {
        let m = three_by_two();
        // Requested 10, but p = 2 and n - 1 = 2.
        assert_eq!(pca(&m, 10).ncols(), 2);
    }

    #[test]
    fn pca_is_deterministic() {
        let mut rng = RngStream::new(3).rng();
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        assert_eq!(pca(&m, 2), pca(&m, 2));
    }

    #[test]
    fn fast_ica_separates_independent_sources() {
        // Two independent uniform sources mixed by a non-orthogonal matrix;
        // the recovered components should each correlate strongly with one
        // source.
        let mut rng = RngStream::new(7).rng();
        use rand::Rng;
        let n = 400;
        let s: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let rows: Vec<Vec<f64>> = s
            .iter()
            .map(|&(a, b)| vec![a + 0.5 * b, 0.3 * a + b])
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let out = fast_ica(&m, 2, &mut RngStream::new(42).rng()).unwrap();
        assert_eq!(out.ncols(), 2);

        let corr = |x: &[f64], y: &[f64]| {
            let n = x.len() as f64;
            let mx = x.iter().sum::<f64>() / n;
            let my = y.iter().sum::<f64>() / n;
            let mut cov = 0.0;
            let mut vx = 0.0;
            let mut vy = 0.0;
            for i in 0..x.len() {
                cov += (x[i] - mx) * (y[i] - my);
                vx += (x[i] - mx) * (x[i] - mx);
                vy += (y[i] - my) * (y[i] - my);
            }
            (cov / (vx.sqrt() * vy.sqrt())).abs()
        };
        let s0: Vec<f64> = s.iter().map(|v| v.0).collect();
        let s1: Vec<f64> = s.iter().map(|v| v.1).collect();
        let c0 = out.column(0);
        let c1 = out.column(1);
        // Each source is recovered by one of the components.
        assert!(corr(&s0, &c0).max(corr(&s0, &c1)) > 0.95);
        assert!(corr(&s1, &c0).max(corr(&s1, &c1)) > 0.95);
    }

    #[test]
    fn fast_ica_is_deterministic_given_stream() {
        let m = Matrix::from_rows(
            &(0..50)
                .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos(), i as f64 % 5.0])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let a = fast_ica(&m, 2, &mut RngStream::new(9).rng()).unwrap();
        let b = fast_ica(&m, 2, &mut RngStream::new(9).rng()).unwrap();
        assert_eq!(a, b);
    }
}
