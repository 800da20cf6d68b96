//! Shared data model: feature matrices, datasets, partitions, and the
//! deterministic random-number contract.

mod io;
mod matrix;
mod rng;

pub use io::{fmt_float, load_csv, save_csv};
pub use matrix::{dist, sq_dist, Matrix, PairwiseDistances};
pub use rng::{label_hash, RngStream};

use crate::{Error, Result};

/// A numeric dataset: n rows (observations) by p columns (attributes),
/// optionally carrying ground-truth cluster labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    id: String,
    features: Matrix,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    /// Validates shape and finiteness; labels are canonicalized so ids form
    /// a contiguous {0..k-1} in order of first appearance.
    pub fn new(id: impl Into<String>, features: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        let id = id.into();
        if features.nrows() < 2 {
            return Err(Error::ShapeError {
                context: "dataset rows",
                expected: 2,
                got: features.nrows(),
            });
        }
        if features.ncols() < 1 {
            return Err(Error::ShapeError {
                context: "dataset columns",
                expected: 1,
                got: features.ncols(),
            });
        }
        if !features.is_finite() {
            return Err(Error::InvalidInput(format!(
                "dataset {id} contains non-finite feature values"
            )));
        }
        let labels = match labels {
            None => None,
            Some(raw) => {
                if raw.len() != features.nrows() {
                    return Err(Error::ShapeError {
                        context: "label length",
                        expected: features.nrows(),
                        got: raw.len(),
                    });
                }
                let signed: Vec<i64> = raw.iter().map(|&l| l as i64).collect();
                Some(canonicalize(&signed)?.into_assignments())
            }
        };
        Ok(Dataset {
            id,
            features,
            labels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    /// Ground-truth labels as a Partition, if present.
    pub fn truth(&self) -> Option<Partition> {
        self.labels
            .as_ref()
            .map(|l| Partition::from_canonical_labels(l.clone()))
    }

    /// Returns the dataset under a different id.
    pub fn with_id(mut self, id: impl Into<String>) -> Dataset {
        self.id = id.into();
        self
    }

    /// The same dataset with labels removed, for search-time use.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            id: self.id.clone(),
            features: self.features.clone(),
            labels: None,
        }
    }
}

/// A hard clustering of n rows into k non-empty clusters. Always canonical:
/// ids are exactly {0..k-1}, numbered by order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignments: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Wraps labels already known to be canonical (each id < k appears,
    /// ids numbered by first appearance). Panics in debug builds otherwise;
    /// use [`canonicalize`] for untrusted input.
    pub fn from_canonical_labels(assignments: Vec<usize>) -> Self {
        let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
        debug_assert!(is_canonical(&assignments, k));
        Partition { assignments, k }
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn into_assignments(self) -> Vec<usize> {
        self.assignments
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Row indices of each cluster, in row order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &a) in self.assignments.iter().enumerate() {
            m[a].push(i);
        }
        m
    }
}

fn is_canonical(assignments: &[usize], k: usize) -> bool {
    let mut next = 0usize;
    let mut seen = vec![false; k];
    for &a in assignments {
        if a >= k {
            return false;
        }
        if !seen[a] {
            if a != next {
                return false;
            }
            seen[a] = true;
            next += 1;
        }
    }
    next == k
}

/// Relabels raw cluster ids to {0..k-1} in order of first appearance.
/// Each -1 (noise) entry becomes a fresh singleton cluster at the point it
/// appears; callers wanting a different noise policy map -1 away first.
pub fn canonicalize(raw: &[i64]) -> Result<Partition> {
    if raw.is_empty() {
        return Err(Error::InvalidPartition(
            "empty assignment sequence".to_string(),
        ));
    }
    let mut map: std::collections::HashMap<i64, usize> = std::collections::HashMap::new();
    let mut next = 0usize;
    let mut assignments = Vec::with_capacity(raw.len());
    for &id in raw {
        if id < -1 {
            return Err(Error::InvalidPartition(format!(
                "cluster id {id} below -1"
            )));
        }
        let canon = if id == -1 {
            let c = next;
            next += 1;
            c
        } else {
            *map.entry(id).or_insert_with(|| {
                let c = next;
                next += 1;
                c
            })
        };
        assignments.push(canon);
    }
    Ok(Partition {
        assignments,
        k: next,
    })
}
