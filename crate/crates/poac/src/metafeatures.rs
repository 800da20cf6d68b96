//! Dataset meta-features: a fixed-order 38-entry numeric description of a
//! feature matrix, computed without labels.
//!
//! Vector-valued base measures (per attribute, per attribute pair, or per
//! instance) are summarized by mean and sample standard deviation; scalar
//! measures contribute one entry. Measures over attribute pairs that do not
//! exist (p = 1) yield NaN and are imputed downstream.

use nalgebra::DMatrix;

use crate::core::{dist, Dataset, Matrix};
use crate::{Error, Result};

/// Canonical entry order. The meta-base CSV header and the surrogate model
/// feature list are both derived from this constant.
pub const META_FEATURE_NAMES: [&str; 38] = [
    "attr_conc.mean",
    "attr_conc.sd",
    "attr_ent.mean",
    "attr_ent.sd",
    "attr_to_inst",
    "cohesiveness.mean",
    "cohesiveness.sd",
    "cov.mean",
    "cov.sd",
    "eigenvalues.mean",
    "eigenvalues.sd",
    "inst_to_attr",
    "iq_range.mean",
    "iq_range.sd",
    "mad.mean",
    "mad.sd",
    "median.mean",
    "median.sd",
    "nr_attr",
    "nr_cor_attr",
    "nr_inst",
    "one_itemset.mean",
    "one_itemset.sd",
    "sd.mean",
    "sd.sd",
    "sparsity.mean",
    "sparsity.sd",
    "t2",
    "t3",
    "t4",
    "t_mean.mean",
    "t_mean.sd",
    "two_itemset.mean",
    "two_itemset.sd",
    "var.mean",
    "var.sd",
    "wg_dist.mean",
    "wg_dist.sd",
];

/// Number of bins for the entropy/concentration discretization.
const ENTROPY_BINS: usize = 10;
/// Number of bins for the itemset discretization.
const ITEMSET_BINS: usize = 2;
/// Attribute-pair measures enumerate pairs over at most this many attributes.
const PAIR_ATTR_CAP: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaFeatureVector {
    values: Vec<f64>,
}

impl MetaFeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names() -> &'static [&'static str; 38] {
        &META_FEATURE_NAMES
    }

    /// Value by canonical name; panics on unknown names (test convenience).
    pub fn get(&self, name: &str) -> f64 {
        let idx = META_FEATURE_NAMES
            .iter()
            .position(|&n| n == name)
            .unwrap_or_else(|| panic!("unknown meta-feature {name}"));
        self.values[idx]
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != META_FEATURE_NAMES.len() {
            return Err(Error::ShapeError {
                context: "meta-feature vector length",
                expected: META_FEATURE_NAMES.len(),
                got: values.len(),
            });
        }
        Ok(MetaFeatureVector { values })
    }
}

/// Extracts all 38 meta-features in canonical order.
pub fn extract(dataset: &Dataset) -> Result<MetaFeatureVector> {
    let n = dataset.n();
    let p = dataset.p();
    if n < 4 {
        return Err(Error::TooFewInstances { min: 4, got: n });
    }
    let m = dataset.features();

    let columns: Vec<Vec<f64>> = (0..p).map(|j| m.column(j)).collect();
    let sorted_columns: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let mut s = c.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();

    // Per-attribute statistical measures.
    let medians: Vec<f64> = sorted_columns.iter().map(|c| quantile(c, 0.5)).collect();
    let iq_ranges: Vec<f64> = sorted_columns
        .iter()
        .map(|c| quantile(c, 0.75) - quantile(c, 0.25))
        .collect();
    let vars: Vec<f64> = columns.iter().map(|c| sample_variance(c)).collect();
    let sds: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();
    let mads: Vec<f64> = columns
        .iter()
        .zip(&medians)
        .map(|(c, &med)| {
            let mut dev: Vec<f64> = c.iter().map(|&x| (x - med).abs()).collect();
            dev.sort_by(f64::total_cmp);
            quantile(&dev, 0.5) * 1.4826
        })
        .collect();
    let t_means: Vec<f64> = sorted_columns.iter().map(|c| trimmed_mean(c, 0.2)).collect();
    let sparsities: Vec<f64> = sorted_columns
        .iter()
        .map(|c| {
            let distinct = count_distinct_sorted(c) as f64;
            (n as f64 / distinct - 1.0) / (n as f64 - 1.0)
        })
        .collect();

    // Discretizations.
    let ent_bins: Vec<Vec<usize>> = columns
        .iter()
        .map(|c| discretize(c, ENTROPY_BINS))
        .collect();
    let item_bins: Vec<Vec<usize>> = columns
        .iter()
        .map(|c| discretize(c, ITEMSET_BINS))
        .collect();
    let entropies: Vec<f64> = ent_bins
        .iter()
        .map(|b| entropy(b, ENTROPY_BINS))
        .collect();

    // Attribute-pair measures on a capped, deterministic attribute subset.
    let pair_attrs = stride_indices(p, PAIR_ATTR_CAP);
    let mut covs = Vec::new();
    let mut correlated_pairs = 0usize;
    let mut total_pairs = 0usize;
    let mut concentrations = Vec::new();
    for (a, &j1) in pair_attrs.iter().enumerate() {
        for &j2 in pair_attrs.iter().skip(a + 1) {
            let c = sample_covariance(&columns[j1], &columns[j2]);
            covs.push(c.abs());
            total_pairs += 1;
            let r = pearson(c, sds[j1], sds[j2]);
            if r.abs() >= 0.5 {
                correlated_pairs += 1;
            }
        }
    }
    for &j1 in &pair_attrs {
        for &j2 in &pair_attrs {
            if j1 != j2 {
                concentrations.push(goodman_kruskal_tau(
                    &ent_bins[j1],
                    &ent_bins[j2],
                    ENTROPY_BINS,
                ));
            }
        }
    }
    let nr_cor_attr = if total_pairs > 0 {
        correlated_pairs as f64 / total_pairs as f64
    } else {
        f64::NAN
    };

    // Itemsets on the 2-bin discretization.
    let one_itemset: Vec<f64> = (0..p)
        .flat_map(|j| {
            let mut counts = [0usize; ITEMSET_BINS];
            for &b in &item_bins[j] {
                counts[b] += 1;
            }
            counts.map(|c| c as f64 / n as f64)
        })
        .collect();
    let mut two_itemset = Vec::new();
    for j1 in 0..p {
        for j2 in (j1 + 1)..p {
            let mut counts = [[0usize; ITEMSET_BINS]; ITEMSET_BINS];
            for i in 0..n {
                counts[item_bins[j1][i]][item_bins[j2][i]] += 1;
            }
            for row in counts {
                for c in row {
                    two_itemset.push(c as f64 / n as f64);
                }
            }
        }
    }

    // Eigenvalues of the sample covariance matrix (full attribute set).
    let eigenvalues = covariance_eigenvalues(&columns, n, p);
    let p_prime = components_for_variance(&eigenvalues, 0.95);

    // Instance-density measures on min-max normalized features.
    let normalized = minmax_normalize(m);
    let (wg_dists, cohesiveness) = instance_density(&normalized);

    let nf = n as f64;
    let pf = p as f64;
    let mut values = Vec::with_capacity(META_FEATURE_NAMES.len());
    push_summary(&mut values, &concentrations); // attr_conc
    push_summary(&mut values, &entropies); // attr_ent
    values.push(pf / nf); // attr_to_inst
    push_summary(&mut values, &cohesiveness);
    push_summary(&mut values, &covs);
    push_summary(&mut values, &eigenvalues);
    values.push(nf / pf); // inst_to_attr
    push_summary(&mut values, &iq_ranges);
    push_summary(&mut values, &mads);
    push_summary(&mut values, &medians);
    values.push(pf); // nr_attr
    values.push(nr_cor_attr);
    values.push(nf); // nr_inst
    push_summary(&mut values, &one_itemset);
    push_summary(&mut values, &sds);
    push_summary(&mut values, &sparsities);
    values.push(pf / nf); // t2
    values.push(p_prime as f64 / nf); // t3
    values.push(p_prime as f64 / pf); // t4
    push_summary(&mut values, &t_means);
    push_summary(&mut values, &two_itemset);
    push_summary(&mut values, &vars);
    push_summary(&mut values, &wg_dists);

    debug_assert_eq!(values.len(), META_FEATURE_NAMES.len());
    Ok(MetaFeatureVector { values })
}

fn push_summary(out: &mut Vec<f64>, xs: &[f64]) {
    out.push(mean(xs));
    out.push(sample_sd(xs));
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for a single value.
fn sample_sd(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(xs);
            (xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let s = sample_sd(xs);
    s * s
}

fn sample_covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let ma = mean(a);
    let mb = mean(b);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1) as f64
}

/// Pearson r from a precomputed covariance; 0 when either side is constant.
fn pearson(cov: f64, sd_a: f64, sd_b: f64) -> f64 {
    if sd_a == 0.0 || sd_b == 0.0 {
        0.0
    } else {
        cov / (sd_a * sd_b)
    }
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Mean after discarding the lowest and highest `trim` fraction of a sorted
/// slice (count rounded down).
fn trimmed_mean(sorted: &[f64], trim: f64) -> f64 {
    let n = sorted.len();
    let k = (trim * n as f64).floor() as usize;
    mean(&sorted[k..n - k])
}

fn count_distinct_sorted(sorted: &[f64]) -> usize {
    let mut count = 1;
    for w in sorted.windows(2) {
        if w[0] != w[1] {
            count += 1;
        }
    }
    count
}

/// Equal-width binning over the observed range; a constant column maps to
/// bin 0; the maximum falls in the last bin.
fn discretize(column: &[f64], bins: usize) -> Vec<usize> {
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    column
        .iter()
        .map(|&x| {
            if span == 0.0 {
                0
            } else {
                (((x - lo) / span * bins as f64) as usize).min(bins - 1)
            }
        })
        .collect()
}

/// Shannon entropy (bits) of bin frequencies.
fn entropy(bin_ids: &[usize], bins: usize) -> f64 {
    let n = bin_ids.len() as f64;
    let mut counts = vec![0usize; bins];
    for &b in bin_ids {
        counts[b] += 1;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n;
            -q * q.log2()
        })
        .sum()
}

/// Goodman-Kruskal tau: proportional reduction in prediction error of y
/// given x, on discretized attributes. 0 when y is concentrated in one bin.
fn goodman_kruskal_tau(x: &[usize], y: &[usize], bins: usize) -> f64 {
    let n = x.len() as f64;
    let mut joint = vec![vec![0usize; bins]; bins];
    let mut x_marginal = vec![0usize; bins];
    let mut y_marginal = vec![0usize; bins];
    for (&a, &b) in x.iter().zip(y) {
        joint[a][b] += 1;
        x_marginal[a] += 1;
        y_marginal[b] += 1;
    }
    let mut conditional = 0.0;
    for a in 0..bins {
        if x_marginal[a] == 0 {
            continue;
        }
        let px = x_marginal[a] as f64 / n;
        for b in 0..bins {
            let pj = joint[a][b] as f64 / n;
            conditional += pj * pj / px;
        }
    }
    let y_sq: f64 = y_marginal
        .iter()
        .map(|&c| {
            let q = c as f64 / n;
            q * q
        })
        .sum();
    let denom = 1.0 - y_sq;
    if denom == 0.0 {
        0.0
    } else {
        (conditional - y_sq) / denom
    }
}

/// Deterministic stride subsample: at most `cap` attribute indices.
pub(crate) fn stride_indices(p: usize, cap: usize) -> Vec<usize> {
    if p <= cap {
        (0..p).collect()
    } else {
        (0..cap).map(|i| i * p / cap).collect()
    }
}

fn covariance_eigenvalues(columns: &[Vec<f64>], n: usize, p: usize) -> Vec<f64> {
    let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let mut s = 0.0;
            for r in 0..n {
                s += (columns[i][r] - means[i]) * (columns[j][r] - means[j]);
            }
            let v = s / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov.symmetric_eigen().eigenvalues.iter().copied().collect()
}

/// Smallest number of principal components whose cumulative explained
/// variance reaches `threshold`; 0 when total variance is 0.
fn components_for_variance(eigenvalues: &[f64], threshold: f64) -> usize {
    let mut sorted: Vec<f64> = eigenvalues.iter().map(|&e| e.max(0.0)).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut cum = 0.0;
    for (i, &e) in sorted.iter().enumerate() {
        cum += e;
        if cum / total >= threshold {
            return i + 1;
        }
    }
    sorted.len()
}

/// Per-column map to [0,1]; constant columns map to 0.
fn minmax_normalize(m: &Matrix) -> Matrix {
    let n = m.nrows();
    let p = m.ncols();
    let mut out = Matrix::zeros(n, p);
    for j in 0..p {
        let col = m.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for i in 0..n {
            let v = if span == 0.0 { 0.0 } else { (col[i] - lo) / span };
            out.set(i, j, v);
        }
    }
    out
}

/// Per-instance density measures on normalized features:
/// wg_dist(i) = weighted mean distance to all other points, weight
/// 2^(-d/dbar); cohesiveness(i) = sum of 2^(-rank) * distance over the
/// other points ranked by proximity (nearest = 1, distance ties broken by
/// row index).
fn instance_density(normalized: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = normalized.nrows();
    let mut dists = vec![0.0f64; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dist(normalized.row(i), normalized.row(j));
            dists[i * n + j] = d;
            dists[j * n + i] = d;
            total += d;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let dbar = total / pairs;

    let mut wg = Vec::with_capacity(n);
    let mut coh = Vec::with_capacity(n);
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let row = &dists[i * n..(i + 1) * n];
        let mut wsum = 0.0;
        let mut wdsum = 0.0;
        for (j, &d) in row.iter().enumerate() {
            if j == i {
                continue;
            }
            let w = if dbar > 0.0 { (-d / dbar).exp2() } else { 1.0 };
            wsum += w;
            wdsum += w * d;
        }
        wg.push(if wsum > 0.0 { wdsum / wsum } else { 0.0 });

        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let mut c = 0.0;
        for (rank0, &j) in order.iter().enumerate() {
            c += (-((rank0 + 1) as f64)).exp2() * row[j];
        }
        coh.push(c);
    }
    (wg, coh)
}
