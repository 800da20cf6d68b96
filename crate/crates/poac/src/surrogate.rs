//! Random-forest surrogate: maps (meta-features, SIL, DBS) to predicted
//! ARI. Hand-rolled CART regression trees with bootstrap aggregation,
//! impurity-decrease importances, grouped cross-validation, and a
//! versioned JSON model format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::RngStream;
use crate::metabase::MetaBaseRow;
use crate::metafeatures::META_FEATURE_NAMES;
use crate::{Error, Result};

const SCHEMA_VERSION: u32 = 1;
const MIN_FIT_ROWS: usize = 50;

/// Which columns of a meta-base row the model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureLayout {
    /// 38 meta-features followed by sil and dbs.
    Full,
    /// sil and dbs only.
    CviOnly,
}

impl FeatureLayout {
    pub fn names(&self) -> Vec<String> {
        match self {
            FeatureLayout::Full => {
                let mut names: Vec<String> =
                    META_FEATURE_NAMES.iter().map(|n| n.to_string()).collect();
                names.push("sil".to_string());
                names.push("dbs".to_string());
                names
            }
            FeatureLayout::CviOnly => vec!["sil".to_string(), "dbs".to_string()],
        }
    }

    pub fn row_features(&self, row: &MetaBaseRow) -> Vec<f64> {
        match self {
            FeatureLayout::Full => {
                let mut v = row.metafeatures.values().to_vec();
                v.push(row.sil);
                v.push(row.dbs);
                v
            }
            FeatureLayout::CviOnly => vec![row.sil, row.dbs],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            bootstrap: true,
        }
    }
}

/// One tree node; `feature == -1` marks a leaf and `value` its output.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Node {
    feature: i64,
    threshold: f64,
    left: usize,
    right: usize,
    value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            let node = &self.nodes[at];
            if node.feature < 0 {
                return node.value;
            }
            at = if x[node.feature as usize] <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurrogateModel {
    feature_names: Vec<String>,
    /// Training-column medians, substituted for NaN at fit and predict time.
    imputation: Vec<f64>,
    trees: Vec<Tree>,
    importances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    feature_names: Vec<String>,
    imputation: Vec<f64>,
    n_trees: usize,
    trees: Vec<Tree>,
    importances: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldScore {
    pub r2: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub r2: f64,
    pub mse: f64,
    pub fold_scores: Vec<FoldScore>,
}

fn median_ignoring_nan(values: &[f64]) -> Option<f64> {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if finite.is_empty() {
        return None;
    }
    finite.sort_by(f64::total_cmp);
    let n = finite.len();
    Some(if n % 2 == 1 {
        finite[n / 2]
    } else {
        (finite[n / 2 - 1] + finite[n / 2]) / 2.0
    })
}

struct TreeGrower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    mtry: usize,
    n_features: usize,
    nodes: Vec<Node>,
    /// Total squared-error decrease attributed to each feature.
    decreases: Vec<f64>,
}

impl<'a> TreeGrower<'a> {
    fn sse(&self, indices: &[usize]) -> (f64, f64) {
        let n = indices.len() as f64;
        let sum: f64 = indices.iter().map(|&i| self.y[i]).sum();
        let sum_sq: f64 = indices.iter().map(|&i| self.y[i] * self.y[i]).sum();
        (sum / n, (sum_sq - sum * sum / n).max(0.0))
    }

    /// Best (threshold, decrease, left_set, right_set) for one feature, or
    /// None when the feature is constant over the node.
    fn best_split_on(
        &self,
        feature: usize,
        indices: &[usize],
        node_sse: f64,
    ) -> Option<(f64, f64)> {
        let mut order: Vec<usize> = indices.to_vec();
        order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
        let n = order.len();
        if self.x[order[0]][feature] == self.x[order[n - 1]][feature] {
            return None;
        }
        let total: f64 = order.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = order.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for pos in 0..n - 1 {
            let i = order[pos];
            left_sum += self.y[i];
            left_sq += self.y[i] * self.y[i];
            let xv = self.x[i][feature];
            let xn = self.x[order[pos + 1]][feature];
            if xv == xn {
                continue;
            }
            let nl = (pos + 1) as f64;
            let nr = (n - pos - 1) as f64;
            let sse_l = (left_sq - left_sum * left_sum / nl).max(0.0);
            let right_sum = total - left_sum;
            let sse_r = (total_sq - left_sq - right_sum * right_sum / nr).max(0.0);
            let decrease = node_sse - sse_l - sse_r;
            // The midpoint of two adjacent floats can round up to the
            // right value, which would send every row left; fall back to
            // the left value so `x <= threshold` always separates.
            let mut threshold = xv + (xn - xv) / 2.0;
            if threshold >= xn {
                threshold = xv;
            }
            if best.is_none_or(|(_, d)| decrease > d) {
                best = Some((threshold, decrease));
            }
        }
        best
    }

    /// Splits one node or leaves it as-is, returning the child index sets.
    /// mtry random candidates are tried first; when none of them separates
    /// the node, the remaining features are swept before declaring a leaf.
    fn split_node(
        &mut self,
        id: usize,
        indices: &[usize],
        node_sse: f64,
        rng: &mut impl Rng,
    ) -> Option<(Vec<usize>, Vec<usize>)> {
        let sampled = rand::seq::index::sample(rng, self.n_features, self.mtry);
        let mut candidates: Vec<usize> = sampled.into_iter().collect();
        candidates.sort_unstable();
        let mut best: Option<(usize, f64, f64)> = None;
        for round in 0..2 {
            let features: Vec<usize> = if round == 0 {
                candidates.clone()
            } else {
                (0..self.n_features)
                    .filter(|f| !candidates.contains(f))
                    .collect()
            };
            for f in features {
                if let Some((threshold, decrease)) = self.best_split_on(f, indices, node_sse) {
                    if best.is_none_or(|(_, _, d)| decrease > d) {
                        best = Some((f, threshold, decrease));
                    }
                }
            }
            if best.is_some() {
                break;
            }
        }
        let (feature, threshold, decrease) = best?;
        self.decreases[feature] += decrease.max(0.0);
        let (left_set, right_set): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.x[i][feature] <= threshold);
        debug_assert!(!left_set.is_empty() && !right_set.is_empty());
        let node = &mut self.nodes[id];
        node.feature = feature as i64;
        node.threshold = threshold;
        Some((left_set, right_set))
    }

    /// Grows the whole tree from `indices`. Explicit work stack; purity
    /// trees can be deep and worker-thread stacks are small. Items are
    /// popped parent-first, left subtree before right, so the rng draw
    /// order matches a preorder recursion.
    fn grow(&mut self, indices: Vec<usize>, rng: &mut impl Rng) {
        // (indices, parent slot); None marks the root.
        let mut work: Vec<(Vec<usize>, Option<(usize, bool)>)> = vec![(indices, None)];
        while let Some((set, slot)) = work.pop() {
            let (mean, node_sse) = self.sse(&set);
            let id = self.nodes.len();
            self.nodes.push(Node {
                feature: -1,
                threshold: 0.0,
                left: 0,
                right: 0,
                value: mean,
            });
            if let Some((parent, is_left)) = slot {
                if is_left {
                    self.nodes[parent].left = id;
                } else {
                    self.nodes[parent].right = id;
                }
            }
            if set.len() < 2 || node_sse <= 1e-12 {
                continue;
            }
            if let Some((left_set, right_set)) = self.split_node(id, &set, node_sse, rng) {
                work.push((right_set, Some((id, false))));
                work.push((left_set, Some((id, true))));
            }
        }
    }
}

/// Fits the forest: `params.n_trees` CART trees grown to purity on
/// bootstrap samples, split over max(1, floor(features/3)) random
/// candidates per node. NaN cells are imputed by the training-column
/// median, and that median is recorded in the model.
pub fn fit(
    rows: &[MetaBaseRow],
    layout: FeatureLayout,
    params: &ForestParams,
    seed: u64,
) -> Result<SurrogateModel> {
    if rows.len() < MIN_FIT_ROWS {
        return Err(Error::TooFewInstances {
            min: MIN_FIT_ROWS,
            got: rows.len(),
        });
    }
    if params.n_trees == 0 {
        return Err(Error::ConfigError("forest needs at least one tree".to_string()));
    }
    let feature_names = layout.names();
    let n_features = feature_names.len();
    let mut x: Vec<Vec<f64>> = rows.iter().map(|r| layout.row_features(r)).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.ari).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitError("target column contains non-finite values".to_string()));
    }

    let mut imputation = Vec::with_capacity(n_features);
    for f in 0..n_features {
        let column: Vec<f64> = x.iter().map(|r| r[f]).collect();
        match median_ignoring_nan(&column) {
            Some(m) => imputation.push(m),
            None => {
                return Err(Error::FitError(format!(
                    "feature {:?} is NaN in every training row",
                    feature_names[f]
                )))
            }
        }
    }
    for row in x.iter_mut() {
        for (v, &m) in row.iter_mut().zip(&imputation) {
            if v.is_nan() {
                *v = m;
            }
        }
    }

    let mtry = (n_features / 3).max(1);
    let n = rows.len();
    let root = RngStream::new(seed);
    let grown: Vec<(Tree, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = root.substream(t as u64).rng();
            let sample: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut grower = TreeGrower {
                x: &x,
                y: &y,
                mtry,
                n_features,
                nodes: Vec::new(),
                decreases: vec![0.0; n_features],
            };
            grower.grow(sample, &mut rng);
            (
                Tree {
                    nodes: grower.nodes,
                },
                grower.decreases,
            )
        })
        .collect();

    let mut totals = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(params.n_trees);
    for (tree, decreases) in grown {
        for (t, d) in totals.iter_mut().zip(&decreases) {
            *t += d;
        }
        trees.push(tree);
    }
    let grand: f64 = totals.iter().sum();
    // A constant target admits no splits; uniform importances state that
    // no feature carries information.
    let importances = if grand > 0.0 {
        totals.iter().map(|t| t / grand).collect()
    } else {
        vec![1.0 / n_features as f64; n_features]
    };

    Ok(SurrogateModel {
        feature_names,
        imputation,
        trees,
        importances,
    })
}

impl SurrogateModel {
    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Mean of the tree outputs after median imputation of NaN entries.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_names.len() {
            return Err(Error::ShapeError {
                context: "prediction feature vector",
                expected: self.feature_names.len(),
                got: features.len(),
            });
        }
        let imputed: Vec<f64> = features
            .iter()
            .zip(&self.imputation)
            .map(|(&v, &m)| if v.is_nan() { m } else { v })
            .collect();
        let sum: f64 = self.trees.iter().map(|t| t.predict(&imputed)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// (name, importance) pairs sorted by importance descending; ties keep
    /// the canonical feature order.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let mut pairs: Vec<(String, f64)> = self
            .feature_names
            .iter()
            .cloned()
            .zip(self.importances.iter().copied())
            .collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
        pairs
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::InvariantError(
                "refusing to save a forest with no trees".to_string(),
            ));
        }
        let file = ModelFile {
            schema_version: SCHEMA_VERSION,
            feature_names: self.feature_names.clone(),
            imputation: self.imputation.clone(),
            n_trees: self.trees.len(),
            trees: self.trees.clone(),
            importances: self.importances.clone(),
        };
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, &file)
            .map_err(|e| Error::FormatError(format!("model serialization failed: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SurrogateModel> {
        let r = BufReader::new(File::open(path)?);
        let file: ModelFile = serde_json::from_reader(r)
            .map_err(|e| Error::FormatError(format!("model file unreadable: {e}")))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::FormatError(format!(
                "model schema version {} unsupported (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let f = file.feature_names.len();
        if file.imputation.len() != f || file.importances.len() != f {
            return Err(Error::FormatError(
                "imputation/importance length does not match feature names".to_string(),
            ));
        }
        if file.trees.len() != file.n_trees || file.trees.is_empty() {
            return Err(Error::FormatError("tree count mismatch".to_string()));
        }
        for tree in &file.trees {
            for node in &tree.nodes {
                let child_ok = node.feature < 0
                    || (node.left < tree.nodes.len()
                        && node.right < tree.nodes.len()
                        && (node.feature as usize) < f);
                if !child_ok {
                    return Err(Error::FormatError(
                        "tree node references out of range".to_string(),
                    ));
                }
            }
        }
        Ok(SurrogateModel {
            feature_names: file.feature_names,
            imputation: file.imputation,
            trees: file.trees,
            importances: file.importances,
        })
    }
}

/// Grouped k-fold cross-validation: every row of a dataset lands in the
/// same fold, so meta-features cannot leak across the split. Folds are
/// assigned by seeded shuffle of the group list.
pub fn cross_validate(
    rows: &[MetaBaseRow],
    layout: FeatureLayout,
    params: &ForestParams,
    folds: usize,
    seed: u64,
) -> Result<CvReport> {
    if folds < 2 {
        return Err(Error::ConfigError(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        by_group.entry(&row.dataset_id).or_default().push(i);
    }
    if by_group.len() < folds {
        return Err(Error::ConfigError(format!(
            "{} distinct datasets cannot fill {folds} folds",
            by_group.len()
        )));
    }
    let mut groups: Vec<&str> = by_group.keys().copied().collect();
    let mut rng = RngStream::new(seed).rng();
    // Fisher-Yates; group order is the sorted id list, so the assignment
    // is independent of row order.
    for i in (1..groups.len()).rev() {
        groups.swap(i, rng.random_range(0..=i));
    }
    let fold_of: BTreeMap<&str, usize> = groups
        .iter()
        .enumerate()
        .map(|(i, &g)| (g, i % folds))
        .collect();

    let mut fold_scores = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train: Vec<MetaBaseRow> = rows
            .iter()
            .filter(|r| fold_of[r.dataset_id.as_str()] != fold)
            .cloned()
            .collect();
        let test: Vec<&MetaBaseRow> = rows
            .iter()
            .filter(|r| fold_of[r.dataset_id.as_str()] == fold)
            .collect();
        let model = fit(&train, layout, params, RngStream::new(seed).substream(fold as u64).stream_id())?;
        let mut preds = Vec::with_capacity(test.len());
        let mut targets = Vec::with_capacity(test.len());
        for row in test {
            preds.push(model.predict(&layout.row_features(row))?);
            targets.push(row.ari);
        }
        fold_scores.push(score(&targets, &preds));
    }
    let r2 = fold_scores.iter().map(|s| s.r2).sum::<f64>() / folds as f64;
    let mse = fold_scores.iter().map(|s| s.mse).sum::<f64>() / folds as f64;
    Ok(CvReport {
        r2,
        mse,
        fold_scores,
    })
}

fn score(targets: &[f64], preds: &[f64]) -> FoldScore {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let ss_res: f64 = targets
        .iter()
        .zip(preds)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res > 0.0 {
        0.0
    } else {
        1.0
    };
    FoldScore {
        r2,
        mse: ss_res / n,
    }
}
