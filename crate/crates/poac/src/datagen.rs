//! Synthetic labeled cluster datasets with controlled geometry.
//!
//! Each cluster is an affinely transformed cloud of i.i.d. standardized
//! draws: center + r * R * diag(scales) * z, where R is a random rotation,
//! scales set the per-axis aspect, and r is the cluster's base radius.
//! Cluster centers are rescaled as a group so the smallest pairwise
//! standardized gap matches the requested overlap level.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gumbel, StandardNormal};
use rayon::prelude::*;

use crate::core::{dist, fmt_float, save_csv, Dataset, Matrix, RngStream};
use crate::{Error, Result};

// Substream labels for the stages of one dataset's generation.
const SUB_CENTERS: u64 = 1;
const SUB_RADII: u64 = 2;
const SUB_CLUSTER: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DistributionKind {
    Normal,
    Exponential,
    Gumbel,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 3] = [
        DistributionKind::Normal,
        DistributionKind::Exponential,
        DistributionKind::Gumbel,
    ];
}

impl fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DistributionKind::Normal => "normal",
            DistributionKind::Exponential => "exponential",
            DistributionKind::Gumbel => "gumbel",
        };
        f.write_str(s)
    }
}

impl FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(DistributionKind::Normal),
            "exponential" => Ok(DistributionKind::Exponential),
            "gumbel" => Ok(DistributionKind::Gumbel),
            other => Err(Error::ConfigError(format!(
                "unknown distribution {other:?} (expected normal, exponential, or gumbel)"
            ))),
        }
    }
}

/// Full description of one synthetic dataset; generation is a pure
/// function of this value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub dims: usize,
    pub clusters: usize,
    pub samples: usize,
    pub overlap: f64,
    pub aspect_ref: f64,
    pub aspect_max_min: f64,
    pub radius_max_min: f64,
    pub distribution: DistributionKind,
    pub imbalance_ratio: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Checks the field ranges (union of the training and validation
    /// groups) and size feasibility.
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, f64, f64, f64); 8] = [
            ("dims", self.dims as f64, 2.0, 100.0),
            ("clusters", self.clusters as f64, 2.0, 35.0),
            ("samples", self.samples as f64, 150.0, 5000.0),
            ("overlap", self.overlap, 1e-6, 1e-5),
            ("aspect_ref", self.aspect_ref, 1.0, 10.0),
            ("aspect_max_min", self.aspect_max_min, 1.0, 10.0),
            ("radius_max_min", self.radius_max_min, 1.0, 10.0),
            ("imbalance_ratio", self.imbalance_ratio, 1.0, 3.0),
        ];
        for (name, value, lo, hi) in checks {
            if !(lo..=hi).contains(&value) {
                return Err(Error::InvalidSpec(format!(
                    "{name}={value} outside [{lo}, {hi}]"
                )));
            }
        }
        if self.clusters * 2 > self.samples {
            return Err(Error::SpecError(format!(
                "{} clusters cannot be allocated from {} samples (need clusters <= samples/2)",
                self.clusters, self.samples
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeF {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeU {
    pub min: usize,
    pub max: usize,
}

/// Sampling ranges for every spec field.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpecRanges {
    pub dims: RangeU,
    pub clusters: RangeU,
    pub samples: RangeU,
    pub overlap: RangeF,
    pub aspect_ref: RangeF,
    pub aspect_max_min: RangeF,
    pub radius_max_min: RangeF,
    pub distributions: Vec<DistributionKind>,
    pub imbalance_ratio: RangeF,
}

impl DatasetSpecRanges {
    /// Ranges used to synthesize the meta-knowledge training corpus.
    pub fn training() -> Self {
        DatasetSpecRanges {
            dims: RangeU { min: 2, max: 100 },
            clusters: RangeU { min: 2, max: 35 },
            samples: RangeU { min: 150, max: 5000 },
            overlap: RangeF { min: 1e-6, max: 1e-5 },
            aspect_ref: RangeF { min: 1.5, max: 5.0 },
            aspect_max_min: RangeF { min: 1.0, max: 5.0 },
            radius_max_min: RangeF { min: 1.0, max: 5.0 },
            distributions: DistributionKind::ALL.to_vec(),
            imbalance_ratio: RangeF { min: 1.0, max: 3.0 },
        }
    }

    /// Ranges of the held-out validation group; wider shape knobs, same
    /// size and overlap ranges.
    pub fn validation() -> Self {
        DatasetSpecRanges {
            aspect_ref: RangeF { min: 1.0, max: 10.0 },
            aspect_max_min: RangeF { min: 1.0, max: 10.0 },
            radius_max_min: RangeF { min: 1.0, max: 10.0 },
            ..Self::training()
        }
    }

    fn validate(&self) -> Result<()> {
        fn check_f(name: &str, r: RangeF) -> Result<()> {
            if r.min > r.max || !r.min.is_finite() || !r.max.is_finite() {
                return Err(Error::ConfigError(format!(
                    "empty range for {name}: [{}, {}]",
                    r.min, r.max
                )));
            }
            Ok(())
        }
        fn check_u(name: &str, r: RangeU) -> Result<()> {
            if r.min > r.max {
                return Err(Error::ConfigError(format!(
                    "empty range for {name}: [{}, {}]",
                    r.min, r.max
                )));
            }
            Ok(())
        }
        check_u("dims", self.dims)?;
        check_u("clusters", self.clusters)?;
        check_u("samples", self.samples)?;
        check_f("overlap", self.overlap)?;
        check_f("aspect_ref", self.aspect_ref)?;
        check_f("aspect_max_min", self.aspect_max_min)?;
        check_f("radius_max_min", self.radius_max_min)?;
        check_f("imbalance_ratio", self.imbalance_ratio)?;
        if self.distributions.is_empty() {
            return Err(Error::ConfigError("no distributions to sample".to_string()));
        }
        if self.overlap.min <= 0.0 {
            return Err(Error::ConfigError(
                "overlap range must be positive for log-uniform sampling".to_string(),
            ));
        }
        Ok(())
    }
}

fn uniform_f(rng: &mut impl Rng, r: RangeF) -> f64 {
    if r.min == r.max {
        r.min
    } else {
        rng.random_range(r.min..r.max)
    }
}

fn uniform_u(rng: &mut impl Rng, r: RangeU) -> usize {
    rng.random_range(r.min..=r.max)
}

/// Draws one spec uniformly inside `ranges` (log-uniform for overlap);
/// the dataset seed is drawn from the same stream.
pub fn sample_spec(ranges: &DatasetSpecRanges, stream: RngStream) -> Result<DatasetSpec> {
    ranges.validate()?;
    let mut rng = stream.rng();
    let dims = uniform_u(&mut rng, ranges.dims);
    let samples = uniform_u(&mut rng, ranges.samples);
    // Respect feasibility: at least two samples per cluster.
    let c_max = ranges.clusters.max.min(samples / 2);
    if c_max < ranges.clusters.min {
        return Err(Error::ConfigError(format!(
            "cluster range [{}, {}] infeasible for {} samples",
            ranges.clusters.min, ranges.clusters.max, samples
        )));
    }
    let clusters = uniform_u(
        &mut rng,
        RangeU {
            min: ranges.clusters.min,
            max: c_max,
        },
    );
    let overlap = (uniform_f(
        &mut rng,
        RangeF {
            min: ranges.overlap.min.ln(),
            max: ranges.overlap.max.ln(),
        },
    ))
    .exp();
    let aspect_ref = uniform_f(&mut rng, ranges.aspect_ref);
    let aspect_max_min = uniform_f(&mut rng, ranges.aspect_max_min);
    let radius_max_min = uniform_f(&mut rng, ranges.radius_max_min);
    let distribution = ranges.distributions[rng.random_range(0..ranges.distributions.len())];
    let imbalance_ratio = uniform_f(&mut rng, ranges.imbalance_ratio);
    let seed = rng.random();
    Ok(DatasetSpec {
        dims,
        clusters,
        samples,
        overlap: overlap.clamp(ranges.overlap.min, ranges.overlap.max),
        aspect_ref,
        aspect_max_min,
        radius_max_min,
        distribution,
        imbalance_ratio,
        seed,
    })
}

/// Geometric size interpolation from s_min to s_max = ratio * s_min,
/// rounded to integers summing exactly to n (largest-remainder rounding).
fn cluster_sizes(n: usize, c: usize, ratio: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..c)
        .map(|i| ratio.powf(i as f64 / (c - 1) as f64))
        .collect();
    let total: f64 = weights.iter().sum();
    let targets: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut sizes: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        sizes[order[i % c]] += 1;
    }
    // Guard against zero-size clusters in extreme corners.
    loop {
        let (min_i, &min_v) = sizes
            .iter()
            .enumerate()
            .min_by_key(|&(_, &s)| s)
            .expect("non-empty");
        if min_v >= 2 {
            break;
        }
        let (max_i, _) = sizes
            .iter()
            .enumerate()
            .max_by_key(|&(_, &s)| s)
            .expect("non-empty");
        sizes[max_i] -= 1;
        sizes[min_i] += 1;
    }
    sizes
}

/// Standard-normal quantile (Acklam's rational approximation, relative
/// error below 1.2e-9). Input must lie strictly inside (0, 1).
fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inverse_normal_cdf(1.0 - p)
    }
}

fn draw_standardized(kind: DistributionKind, rng: &mut impl Rng, out: &mut [f64]) {
    match kind {
        DistributionKind::Normal => {
            for v in out.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
        }
        DistributionKind::Exponential => {
            // Exp(1) has mean 1 and variance 1.
            for v in out.iter_mut() {
                let e: f64 = Exp1.sample(rng);
                *v = e - 1.0;
            }
        }
        DistributionKind::Gumbel => {
            // Standard Gumbel has mean gamma (Euler-Mascheroni) and
            // variance pi^2/6.
            const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
            let scale = std::f64::consts::PI / 6.0f64.sqrt();
            let g = Gumbel::new(0.0, 1.0).expect("valid gumbel");
            for v in out.iter_mut() {
                let x: f64 = g.sample(rng);
                *v = (x - EULER_GAMMA) / scale;
            }
        }
    }
}

/// Random rotation: Q factor of a standard-normal matrix with column signs
/// fixed so the distribution is uniform over the orthogonal group.
fn random_rotation(p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let normal: Vec<f64> = (0..p * p).map(|_| StandardNormal.sample(rng)).collect();
    let m = DMatrix::from_vec(p, p, normal);
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            for i in 0..p {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Per-axis scale factors with max/min ratio exactly `aspect`, normalized
/// to unit root-mean-square so the base radius keeps its meaning.
fn axis_scales(p: usize, aspect: f64, rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..1.0)).collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut scales: Vec<f64> = raw
        .iter()
        .map(|&v| {
            let unit = if span > 0.0 { (v - lo) / span } else { 0.5 };
            aspect.powf(unit)
        })
        .collect();
    let rms = (scales.iter().map(|s| s * s).sum::<f64>() / p as f64).sqrt();
    for s in scales.iter_mut() {
        *s /= rms;
    }
    scales
}

/// Generates the dataset described by `spec`. Pure: identical specs yield
/// bit-identical datasets.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let p = spec.dims;
    let c = spec.clusters;
    let n = spec.samples;
    let root = RngStream::new(spec.seed);

    let sizes = cluster_sizes(n, c, spec.imbalance_ratio);

    // Base radii: log-uniform in [1, radius_max_min], normalized by their
    // geometric mean; pairwise ratios stay within radius_max_min.
    let mut radii: Vec<f64> = {
        let mut rng = root.rng_at(SUB_RADII);
        (0..c)
            .map(|_| (rng.random_range(0.0..1.0) * spec.radius_max_min.ln()).exp())
            .collect()
    };
    let log_mean = radii.iter().map(|r| r.ln()).sum::<f64>() / c as f64;
    let gm = log_mean.exp();
    for r in radii.iter_mut() {
        *r /= gm;
    }

    // Centers: uniform cloud rescaled about its centroid so the smallest
    // pairwise standardized gap hits the target implied by the overlap.
    let target_gap = std::f64::consts::SQRT_2 * inverse_normal_cdf(1.0 - spec.overlap);
    let centers = {
        let mut rng = root.rng_at(SUB_CENTERS);
        let mut centers: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..p).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let mut min_gap = f64::INFINITY;
        for i in 0..c {
            for j in (i + 1)..c {
                let gap = dist(&centers[i], &centers[j]) / (radii[i] + radii[j]);
                if gap < min_gap {
                    min_gap = gap;
                }
            }
        }
        if min_gap <= 0.0 || !min_gap.is_finite() {
            return Err(Error::SpecError(
                "coincident cluster centers drawn; change the seed".to_string(),
            ));
        }
        let centroid: Vec<f64> = (0..p)
            .map(|j| centers.iter().map(|ce| ce[j]).sum::<f64>() / c as f64)
            .collect();
        let s = target_gap / min_gap;
        for ce in centers.iter_mut() {
            for j in 0..p {
                ce[j] = centroid[j] + s * (ce[j] - centroid[j]);
            }
        }
        centers
    };

    let mut features = Matrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0usize;
    let mut z = vec![0.0f64; p];
    for (i, &size) in sizes.iter().enumerate() {
        let mut rng = root.substream(SUB_CLUSTER).rng_at(i as u64);
        let rotation = random_rotation(p, &mut rng);
        let aspect = {
            let half = spec.aspect_max_min.sqrt();
            let lo = (spec.aspect_ref / half).max(1.0);
            let hi = (spec.aspect_ref * half).max(lo);
            let u = rng.random_range(0.0..1.0);
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        };
        let scales = axis_scales(p, aspect, &mut rng);
        for _ in 0..size {
            draw_standardized(spec.distribution, &mut rng, &mut z);
            for (zj, s) in z.iter_mut().zip(&scales) {
                *zj *= s * radii[i];
            }
            let out = features.row_mut(row);
            for a in 0..p {
                let mut acc = centers[i][a];
                for (b, &zb) in z.iter().enumerate() {
                    acc += rotation[(a, b)] * zb;
                }
                out[a] = acc;
            }
            labels.push(i);
            row += 1;
        }
    }

    Dataset::new(format!("ds_{:016x}", spec.seed), features, Some(labels))
}

/// One manifest line: the dataset id and the spec that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub spec: DatasetSpec,
}

pub const MANIFEST_HEADER: &str = "id,dims,clusters,samples,overlap,aspect_ref,aspect_max_min,radius_max_min,distribution,imbalance_ratio,seed";

/// Samples `count` specs, generates each dataset in parallel, and writes
/// `<id>.csv` files plus `manifest.csv` into `out`. Output bytes are
/// independent of the worker-thread count.
pub fn generate_corpus(
    count: usize,
    ranges: &DatasetSpecRanges,
    seed: u64,
    out: &Path,
) -> Result<Vec<ManifestEntry>> {
    if count == 0 {
        return Err(Error::ConfigError("dataset count must be >= 1".to_string()));
    }
    ranges.validate()?;
    std::fs::create_dir_all(out)?;
    let root = RngStream::new(seed);
    let width = count.to_string().len().max(4);

    let specs: Vec<ManifestEntry> = (0..count)
        .map(|i| {
            let spec = sample_spec(ranges, root.substream(i as u64))?;
            Ok(ManifestEntry {
                id: format!("ds{:0width$}", i, width = width),
                spec,
            })
        })
        .collect::<Result<_>>()?;

    let datasets: Vec<Dataset> = specs
        .par_iter()
        .map(|entry| generate(&entry.spec).map(|d| d.with_id(entry.id.clone())))
        .collect::<Result<_>>()?;

    for dataset in &datasets {
        save_csv(dataset, out.join(format!("{}.csv", dataset.id())))?;
    }

    let mut manifest = std::io::BufWriter::new(std::fs::File::create(out.join("manifest.csv"))?);
    writeln!(manifest, "{MANIFEST_HEADER}")?;
    for entry in &specs {
        let s = &entry.spec;
        writeln!(
            manifest,
            "{},{},{},{},{},{},{},{},{},{},{}",
            entry.id,
            s.dims,
            s.clusters,
            s.samples,
            fmt_float(s.overlap),
            fmt_float(s.aspect_ref),
            fmt_float(s.aspect_max_min),
            fmt_float(s.radius_max_min),
            s.distribution,
            fmt_float(s.imbalance_ratio),
            s.seed
        )?;
    }
    manifest.flush()?;
    Ok(specs)
}

/// Reads a manifest written by [`generate_corpus`].
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::IoError(io),
            other => Error::ParseError {
                row: 0,
                column: 0,
                message: format!("{other:?}"),
            },
        })?;
    let mut entries = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| Error::ParseError {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let field = |col: usize| -> Result<&str> {
            record.get(col).ok_or(Error::ParseError {
                row,
                column: col + 1,
                message: "missing field".to_string(),
            })
        };
        fn parse<T: FromStr>(s: &str, row: usize, column: usize) -> Result<T> {
            s.trim().parse().map_err(|_| Error::ParseError {
                row,
                column,
                message: format!("cannot parse {s:?}"),
            })
        }
        entries.push(ManifestEntry {
            id: field(0)?.to_string(),
            spec: DatasetSpec {
                dims: parse(field(1)?, row, 2)?,
                clusters: parse(field(2)?, row, 3)?,
                samples: parse(field(3)?, row, 4)?,
                overlap: parse(field(4)?, row, 5)?,
                aspect_ref: parse(field(5)?, row, 6)?,
                aspect_max_min: parse(field(6)?, row, 7)?,
                radius_max_min: parse(field(7)?, row, 8)?,
                distribution: DistributionKind::from_str(field(8)?.trim())?,
                imbalance_ratio: parse(field(9)?, row, 10)?,
                seed: parse(field(10)?, row, 11)?,
            },
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn base_spec() -> DatasetSpec {
        DatasetSpec {
            dims: 2,
            clusters: 2,
            samples: 150,
            overlap: 1e-6,
            aspect_ref: 1.5,
            aspect_max_min: 1.0,
            radius_max_min: 1.0,
            distribution: DistributionKind::Normal,
            imbalance_ratio: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn balanced_two_cluster_sizes() {
        let d = generate(&base_spec()).unwrap();
        let truth = d.truth().unwrap();
        assert_eq!(truth.cluster_sizes(), vec![75, 75]);
    }

    #[test]
    fn imbalanced_sizes_solve_the_ratio() {
        let spec = DatasetSpec {
            samples: 400,
            imbalance_ratio: 3.0,
            ..base_spec()
        };
        let d = generate(&spec).unwrap();
        let mut sizes = d.truth().unwrap().cluster_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![100, 300]);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DatasetSpec {
            dims: 5,
            clusters: 4,
            samples: 200,
            distribution: DistributionKind::Gumbel,
            aspect_max_min: 3.0,
            radius_max_min: 2.0,
            imbalance_ratio: 2.0,
            ..base_spec()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.features().as_slice().iter().zip(b.features().as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn every_cluster_is_populated() {
        for seed in 0..5 {
            let spec = DatasetSpec {
                clusters: 7,
                samples: 300,
                imbalance_ratio: 3.0,
                seed,
                ..base_spec()
            };
            let d = generate(&spec).unwrap();
            let truth = d.truth().unwrap();
            assert_eq!(truth.k(), 7);
            let sizes = truth.cluster_sizes();
            assert!(sizes.iter().all(|&s| s > 0));
            assert_eq!(sizes.iter().sum::<usize>(), 300);
            let max = *sizes.iter().max().unwrap() as f64;
            let min = *sizes.iter().min().unwrap() as f64;
            assert!(
                (max / min - spec.imbalance_ratio).abs() <= 2.0 / min,
                "seed {seed}: ratio {} vs {}",
                max / min,
                spec.imbalance_ratio
            );
        }
    }

    #[test]
    fn infeasible_cluster_count_rejected() {
        let spec = DatasetSpec {
            clusters: 35,
            samples: 60,
            ..base_spec()
        };
        // samples below range boundary is an InvalidSpec; use in-range
        // samples with too many clusters for the SpecError path.
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
        let spec = DatasetSpec {
            clusters: 35,
            samples: 35 * 2 - 1,
            ..base_spec()
        };
        // 69 < 150 is out of range too; craft a feasibility-only failure.
        let spec2 = DatasetSpec {
            clusters: 35,
            samples: 150,
            ..spec
        };
        // 35*2 = 70 <= 150, so this one is fine.
        assert!(spec2.validate().is_ok());
        let bad = DatasetSpec {
            dims: 0,
            ..base_spec()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn sample_spec_respects_ranges() {
        let ranges = DatasetSpecRanges::training();
        for i in 0..50 {
            let spec = sample_spec(&ranges, RngStream::with_stream(3, i)).unwrap();
            assert!(spec.validate().is_ok(), "draw {i}: {spec:?}");
            assert!((2..=100).contains(&spec.dims));
            assert!((1e-6..=1e-5).contains(&spec.overlap));
            assert!((1.5..=5.0).contains(&spec.aspect_ref));
        }
    }

    #[test]
    fn sample_spec_degenerate_range_is_constant() {
        let mut ranges = DatasetSpecRanges::training();
        ranges.dims = RangeU { min: 2, max: 2 };
        for i in 0..10 {
            let spec = sample_spec(&ranges, RngStream::with_stream(5, i)).unwrap();
            assert_eq!(spec.dims, 2);
        }
    }

    #[test]
    fn sample_spec_rejects_inverted_range() {
        let mut ranges = DatasetSpecRanges::training();
        ranges.aspect_ref = RangeF { min: 5.0, max: 1.5 };
        assert!(matches!(
            sample_spec(&ranges, RngStream::new(1)),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn inverse_normal_cdf_reference_points() {
        assert_abs_diff_eq!(inverse_normal_cdf(0.5), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inverse_normal_cdf(0.975), 1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(inverse_normal_cdf(0.84134474606854), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(
            inverse_normal_cdf(0.1),
            -inverse_normal_cdf(0.9),
            epsilon = 1e-12
        );
        // Tail used by the overlap mapping.
        assert_abs_diff_eq!(inverse_normal_cdf(1.0 - 1e-6), 4.753424, epsilon = 1e-5);
    }

    #[test]
    fn standardized_draws_have_unit_moments() {
        for kind in DistributionKind::ALL {
            let mut rng = RngStream::with_stream(11, kind as u64).rng();
            let mut buf = vec![0.0; 200_000];
            draw_standardized(kind, &mut rng, &mut buf);
            let mean = buf.iter().sum::<f64>() / buf.len() as f64;
            let var = buf.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (buf.len() - 1) as f64;
            assert!(mean.abs() < 0.02, "{kind:?}: mean {mean}");
            assert!((var - 1.0).abs() < 0.03, "{kind:?}: var {var}");
        }
    }

    #[test]
    fn cluster_size_interpolation_is_geometric() {
        let sizes = cluster_sizes(1000, 4, 2.0);
        assert_eq!(sizes.iter().sum::<usize>(), 1000);
        // Ratios between consecutive sizes approximate 2^(1/3).
        for w in sizes.windows(2) {
            let r = w[1] as f64 / w[0] as f64;
            assert!((r - 2.0f64.powf(1.0 / 3.0)).abs() < 0.05, "{sizes:?}");
        }
    }

    #[test]
    fn corpus_writes_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut ranges = DatasetSpecRanges::training();
        ranges.samples = RangeU { min: 150, max: 200 };
        ranges.dims = RangeU { min: 2, max: 4 };
        ranges.clusters = RangeU { min: 2, max: 4 };
        let entries = generate_corpus(3, &ranges, 99, dir.path()).unwrap();
        assert_eq!(entries.len(), 3);
        for e in &entries {
            assert!(dir.path().join(format!("{}.csv", e.id)).exists());
        }
        let loaded = load_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded, entries);

        // Re-running yields byte-identical artifacts.
        let dir2 = tempfile::tempdir().unwrap();
        generate_corpus(3, &ranges, 99, dir2.path()).unwrap();
        for name in ["manifest.csv", &format!("{}.csv", entries[0].id)] {
            let a = std::fs::read(dir.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn corpus_rejects_zero_count() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            generate_corpus(0, &DatasetSpecRanges::training(), 1, dir.path()),
            Err(Error::ConfigError(_))
        ));
    }
}
