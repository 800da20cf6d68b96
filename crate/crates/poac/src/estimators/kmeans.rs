//! Lloyd k-means with k-means++ or uniform seeding, plus the mini-batch
//! variant sharing the same objective.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{nearest_centroid, Deadline};
use crate::core::{canonicalize, sq_dist, Matrix, Partition, RngStream};
use crate::{Error, Result};

const RESTARTS: usize = 10;
const MAX_ITERS: usize = 300;
const TOL: f64 = 1e-4;
const MB_EPOCHS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KMeansInit {
    PlusPlus,
    Random,
}

/// k distinct rows chosen uniformly.
fn random_init(features: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    rand::seq::index::sample(rng, features.nrows(), k)
        .into_iter()
        .map(|i| features.row(i).to_vec())
        .collect()
}

/// k-means++ seeding: first center uniform, then each next center drawn
/// with probability proportional to squared distance from the chosen set.
fn plus_plus_init(features: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.nrows();
    let first = rng.random_range(0..n);
    let mut centers = vec![features.row(first).to_vec()];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(features.row(i), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                cum += w;
                if cum > r {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave r at or past the final cumulative sum;
            // fall back to the last point with positive weight.
            pick.unwrap_or_else(|| {
                d2.iter().rposition(|&w| w > 0.0).expect("total > 0")
            })
        } else {
            // Every point coincides with a chosen center.
            rng.random_range(0..n)
        };
        centers.push(features.row(next).to_vec());
        for i in 0..n {
            let d = sq_dist(features.row(i), centers.last().expect("just pushed"));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

/// One Lloyd run to convergence; returns the final (inertia, assignment).
fn lloyd(
    features: &Matrix,
    mut centroids: Vec<Vec<f64>>,
    deadline: Deadline,
) -> Result<(f64, Vec<usize>)> {
    let n = features.nrows();
    let k = centroids.len();
    let p = features.ncols();
    let mut assignment = vec![usize::MAX; n];
    let mut prev_inertia = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        deadline.check()?;
        let mut changed = false;
        inertia = 0.0;
        for i in 0..n {
            let c = nearest_centroid(features.row(i), &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            inertia += sq_dist(features.row(i), &centroids[c]);
        }
        debug_assert!(
            !prev_inertia.is_finite() || inertia <= prev_inertia * (1.0 + 1e-12) + 1e-9,
            "inertia increased: {prev_inertia} -> {inertia}"
        );
        if !changed {
            break;
        }
        if prev_inertia.is_finite() && prev_inertia - inertia <= TOL * prev_inertia {
            break;
        }
        prev_inertia = inertia;

        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (s, &v) in sums[assignment[i]].iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (m, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *m = s / counts[c] as f64;
                }
            }
        }
        relocate_empty(features, &mut centroids, &mut assignment, &counts);
    }
    Ok((inertia, assignment))
}

/// Each empty cluster takes over the point currently farthest from its own
/// centroid; distinct points across empties, ties to the lowest index.
fn relocate_empty(
    features: &Matrix,
    centroids: &mut [Vec<f64>],
    assignment: &mut [usize],
    counts: &[usize],
) {
    let empties: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] == 0).collect();
    if empties.is_empty() {
        return;
    }
    let mut contribution: Vec<(f64, usize)> = (0..features.nrows())
        .map(|i| (sq_dist(features.row(i), &centroids[assignment[i]]), i))
        .collect();
    contribution.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    // Fewer than k clusters can be empty, and k <= n, so indexing is safe.
    for (slot, &c) in empties.iter().enumerate() {
        let (_, i) = contribution[slot];
        centroids[c] = features.row(i).to_vec();
        assignment[i] = c;
    }
}

/// Lloyd k-means: 10 restarts, 300 iterations each, stopping when the
/// assignment is stable or the relative inertia improvement drops to 1e-4.
/// The best restart by final inertia wins (earlier restart on ties).
pub fn kmeans(
    features: &Matrix,
    k: usize,
    init: KMeansInit,
    stream: RngStream,
    deadline: Deadline,
) -> Result<Partition> {
    let n = features.nrows();
    if k == 0 || k > n {
        return Err(Error::InfeasibleK { k, n });
    }
    let mut rng = stream.rng();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..RESTARTS {
        deadline.check()?;
        let centroids = match init {
            KMeansInit::PlusPlus => plus_plus_init(features, k, &mut rng),
            KMeansInit::Random => random_init(features, k, &mut rng),
        };
        let (inertia, assignment) = lloyd(features, centroids, deadline)?;
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assignment));
        }
    }
    let (_, assignment) = best.expect("at least one restart");
    finish(assignment)
}

fn finish(assignment: Vec<usize>) -> Result<Partition> {
    let labels: Vec<i64> = assignment.into_iter().map(|c| c as i64).collect();
    canonicalize(&labels)
}

fn full_inertia(features: &Matrix, centroids: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let mut inertia = 0.0;
    let mut assignment = Vec::with_capacity(features.nrows());
    for i in 0..features.nrows() {
        let c = nearest_centroid(features.row(i), centroids);
        inertia += sq_dist(features.row(i), &centroids[c]);
        assignment.push(c);
    }
    (inertia, assignment)
}

/// Mini-batch k-means: k-means++ seeding, then per-batch centroid updates
/// with per-center learning rates 1/count, up to 100 epochs, stopping when
/// the full-data inertia settles.
pub fn mini_batch_kmeans(
    features: &Matrix,
    k: usize,
    batch_size: usize,
    stream: RngStream,
    deadline: Deadline,
) -> Result<Partition> {
    let n = features.nrows();
    if k == 0 || k > n {
        return Err(Error::InfeasibleK { k, n });
    }
    let mut rng = stream.rng();
    let mut centroids = plus_plus_init(features, k, &mut rng);
    let mut counts = vec![0u64; k];
    let b = batch_size.clamp(1, n);
    let steps = n.div_ceil(b);
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..MB_EPOCHS {
        for _ in 0..steps {
            deadline.check()?;
            for i in rand::seq::index::sample(&mut rng, n, b) {
                let c = nearest_centroid(features.row(i), &centroids);
                counts[c] += 1;
                let eta = 1.0 / counts[c] as f64;
                for (m, &v) in centroids[c].iter_mut().zip(features.row(i)) {
                    *m += eta * (v - *m);
                }
            }
        }
        let (inertia, _) = full_inertia(features, &centroids);
        // Mini-batch inertia is not monotone; stop once it settles.
        if prev_inertia.is_finite()
            && (prev_inertia - inertia).abs() <= TOL * prev_inertia.abs().max(f64::MIN_POSITIVE)
        {
            break;
        }
        prev_inertia = inertia;
    }
    let (_, assignment) = full_inertia(features, &centroids);
    finish(assignment)
}
