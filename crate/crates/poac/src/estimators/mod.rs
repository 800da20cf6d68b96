//! Pipeline operators: preprocessing transforms, clusterers, their
//! hyperparameter grids, and pipeline application.
//!
//! A pipeline is a chain of 0 to 3 preprocessing steps followed by exactly
//! one clusterer. Every operator is pure given its random stream, so
//! pipeline evaluation can fan out across threads freely.

mod agglomerative;
mod dbscan;
mod kmeans;
mod preprocess;
mod spectral;

pub use kmeans::KMeansInit;

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::core::{Dataset, Matrix, Partition, RngStream};
use crate::{Error, Result};

/// Wall-clock budget for one pipeline evaluation. Checked cooperatively
/// inside iterative solvers; exceeding it surfaces as a SolverError that
/// callers map to a worst-fitness sentinel.
#[derive(Clone, Copy, Debug)]
pub struct Deadline(Option<Instant>);

impl Deadline {
    pub fn none() -> Self {
        Deadline(None)
    }

    pub fn after(budget: Duration) -> Self {
        Deadline(Some(Instant::now() + budget))
    }

    pub(crate) fn check(&self) -> Result<()> {
        match self.0 {
            Some(t) if Instant::now() > t => Err(Error::SolverError(
                "evaluation budget exceeded".to_string(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorKind {
    MinMaxScaler,
    Normalizer,
    StandardScaler,
    VarianceThreshold,
    #[serde(rename = "PCA")]
    Pca,
    #[serde(rename = "FastICA")]
    FastIca,
    KMeans,
    MiniBatchKMeans,
    #[serde(rename = "DBSCAN")]
    Dbscan,
    Agglomerative,
    Spectral,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 11] = [
        OperatorKind::MinMaxScaler,
        OperatorKind::Normalizer,
        OperatorKind::StandardScaler,
        OperatorKind::VarianceThreshold,
        OperatorKind::Pca,
        OperatorKind::FastIca,
        OperatorKind::KMeans,
        OperatorKind::MiniBatchKMeans,
        OperatorKind::Dbscan,
        OperatorKind::Agglomerative,
        OperatorKind::Spectral,
    ];

    /// Terminal operators produce partitions; the rest transform features.
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            OperatorKind::KMeans
                | OperatorKind::MiniBatchKMeans
                | OperatorKind::Dbscan
                | OperatorKind::Agglomerative
                | OperatorKind::Spectral
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::MinMaxScaler => "MinMaxScaler",
            OperatorKind::Normalizer => "Normalizer",
            OperatorKind::StandardScaler => "StandardScaler",
            OperatorKind::VarianceThreshold => "VarianceThreshold",
            OperatorKind::Pca => "PCA",
            OperatorKind::FastIca => "FastICA",
            OperatorKind::KMeans => "KMeans",
            OperatorKind::MiniBatchKMeans => "MiniBatchKMeans",
            OperatorKind::Dbscan => "DBSCAN",
            OperatorKind::Agglomerative => "Agglomerative",
            OperatorKind::Spectral => "Spectral",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A hyperparameter value; grids enumerate finitely many of these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl HyperValue {
    pub fn text(s: &str) -> Self {
        HyperValue::Text(s.to_string())
    }
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::Int(v) => write!(f, "{v}"),
            HyperValue::Float(v) => write!(f, "{v}"),
            HyperValue::Text(v) => f.write_str(v),
        }
    }
}

/// One hyperparameter axis: a name and its finite set of admissible values.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrid {
    pub name: &'static str,
    pub values: Vec<HyperValue>,
}

/// The full grid of one operator.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorGrid {
    pub kind: OperatorKind,
    pub params: Vec<ParamGrid>,
}

fn ints(values: impl IntoIterator<Item = i64>) -> Vec<HyperValue> {
    values.into_iter().map(HyperValue::Int).collect()
}

fn floats(values: impl IntoIterator<Item = f64>) -> Vec<HyperValue> {
    values.into_iter().map(HyperValue::Float).collect()
}

fn texts(values: &[&str]) -> Vec<HyperValue> {
    values.iter().map(|s| HyperValue::text(s)).collect()
}

/// The declared hyperparameter grid of every operator; the search space of
/// the pipeline optimizer and the validation authority for configs.
pub fn default_grids() -> Vec<OperatorGrid> {
    OperatorKind::ALL
        .iter()
        .map(|&kind| grid_for(kind))
        .collect()
}

pub fn grid_for(kind: OperatorKind) -> OperatorGrid {
    let params = match kind {
        OperatorKind::MinMaxScaler | OperatorKind::StandardScaler => vec![],
        OperatorKind::Normalizer => vec![ParamGrid {
            name: "norm",
            values: texts(&["l1", "l2"]),
        }],
        OperatorKind::VarianceThreshold => vec![ParamGrid {
            name: "threshold",
            values: floats([0.1, 0.25]),
        }],
        OperatorKind::Pca | OperatorKind::FastIca => vec![ParamGrid {
            name: "n_components",
            values: ints([2, 3, 5, 10]),
        }],
        OperatorKind::KMeans => vec![
            ParamGrid {
                name: "n_clusters",
                values: ints(2..=22),
            },
            ParamGrid {
                name: "init",
                values: texts(&["k-means++", "random"]),
            },
        ],
        OperatorKind::MiniBatchKMeans => vec![
            ParamGrid {
                name: "n_clusters",
                values: ints(2..=22),
            },
            ParamGrid {
                name: "batch_size",
                values: ints([10, 32, 100, 256]),
            },
        ],
        OperatorKind::Dbscan => vec![
            ParamGrid {
                name: "eps",
                values: floats([0.001, 0.01, 0.1, 1.0, 10.0, 100.0]),
            },
            ParamGrid {
                name: "min_samples",
                values: ints(2..=22),
            },
        ],
        OperatorKind::Agglomerative => vec![ParamGrid {
            name: "n_clusters",
            values: ints(2..=22),
        }],
        OperatorKind::Spectral => vec![
            ParamGrid {
                name: "n_clusters",
                values: ints(2..=22),
            },
            ParamGrid {
                name: "affinity",
                values: texts(&["nearest_neighbors", "rbf"]),
            },
        ],
    };
    OperatorGrid { kind, params }
}

/// A fully specified operator: a kind plus one value per grid axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorConfigRepr", into = "OperatorConfigRepr")]
pub struct OperatorConfig {
    kind: OperatorKind,
    hyperparameters: BTreeMap<String, HyperValue>,
}

#[derive(Serialize, Deserialize)]
struct OperatorConfigRepr {
    kind: OperatorKind,
    hyperparameters: BTreeMap<String, HyperValue>,
}

impl TryFrom<OperatorConfigRepr> for OperatorConfig {
    type Error = Error;

    fn try_from(repr: OperatorConfigRepr) -> Result<Self> {
        OperatorConfig::new(repr.kind, repr.hyperparameters)
    }
}

impl From<OperatorConfig> for OperatorConfigRepr {
    fn from(op: OperatorConfig) -> Self {
        OperatorConfigRepr {
            kind: op.kind,
            hyperparameters: op.hyperparameters,
        }
    }
}

impl OperatorConfig {
    /// Validates the parameter map against the kind's declared grid:
    /// every axis present, every value admissible, no extras.
    pub fn new(kind: OperatorKind, hyperparameters: BTreeMap<String, HyperValue>) -> Result<Self> {
        let grid = grid_for(kind);
        for axis in &grid.params {
            match hyperparameters.get(axis.name) {
                None => {
                    return Err(Error::ConfigError(format!(
                        "{kind}: missing hyperparameter {:?}",
                        axis.name
                    )))
                }
                Some(v) if !axis.values.contains(v) => {
                    return Err(Error::ConfigError(format!(
                        "{kind}: value {v} not in the {:?} grid",
                        axis.name
                    )))
                }
                Some(_) => {}
            }
        }
        for name in hyperparameters.keys() {
            if !grid.params.iter().any(|a| a.name == name) {
                return Err(Error::ConfigError(format!(
                    "{kind}: unknown hyperparameter {name:?}"
                )));
            }
        }
        Ok(OperatorConfig {
            kind,
            hyperparameters,
        })
    }

    /// Convenience constructor from (name, value) pairs.
    pub fn with_params(
        kind: OperatorKind,
        params: impl IntoIterator<Item = (&'static str, HyperValue)>,
    ) -> Result<Self> {
        Self::new(
            kind,
            params
                .into_iter()
                .map(|(n, v)| (n.to_string(), v))
                .collect(),
        )
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn hyperparameters(&self) -> &BTreeMap<String, HyperValue> {
        &self.hyperparameters
    }

    pub(crate) fn usize_param(&self, name: &str) -> usize {
        match self.hyperparameters.get(name) {
            Some(HyperValue::Int(v)) => *v as usize,
            other => unreachable!("{}: {name} must be an integer, got {other:?}", self.kind),
        }
    }

    pub(crate) fn f64_param(&self, name: &str) -> f64 {
        match self.hyperparameters.get(name) {
            Some(HyperValue::Float(v)) => *v,
            Some(HyperValue::Int(v)) => *v as f64,
            other => unreachable!("{}: {name} must be numeric, got {other:?}", self.kind),
        }
    }

    pub(crate) fn str_param(&self, name: &str) -> &str {
        match self.hyperparameters.get(name) {
            Some(HyperValue::Text(v)) => v,
            other => unreachable!("{}: {name} must be text, got {other:?}", self.kind),
        }
    }
}

/// An ordered chain of 0-3 preprocessing operators closed by exactly one
/// clusterer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PipelineSpecRepr", into = "PipelineSpecRepr")]
pub struct PipelineSpec {
    steps: Vec<OperatorConfig>,
}

#[derive(Serialize, Deserialize)]
struct PipelineSpecRepr {
    steps: Vec<OperatorConfig>,
}

impl TryFrom<PipelineSpecRepr> for PipelineSpec {
    type Error = Error;

    fn try_from(repr: PipelineSpecRepr) -> Result<Self> {
        PipelineSpec::new(repr.steps)
    }
}

impl From<PipelineSpec> for PipelineSpecRepr {
    fn from(p: PipelineSpec) -> Self {
        PipelineSpecRepr { steps: p.steps }
    }
}

impl PipelineSpec {
    pub const MAX_LEN: usize = 4;

    pub fn new(steps: Vec<OperatorConfig>) -> Result<Self> {
        if steps.is_empty() || steps.len() > Self::MAX_LEN {
            return Err(Error::InvalidPipeline(format!(
                "length {} outside [1, {}]",
                steps.len(),
                Self::MAX_LEN
            )));
        }
        let last = steps.len() - 1;
        for (i, step) in steps.iter().enumerate() {
            let terminal = step.kind().is_terminal();
            if i == last && !terminal {
                return Err(Error::InvalidPipeline(format!(
                    "final step {} is not a clusterer",
                    step.kind()
                )));
            }
            if i != last && terminal {
                return Err(Error::InvalidPipeline(format!(
                    "clusterer {} in non-final position {i}",
                    step.kind()
                )));
            }
        }
        Ok(PipelineSpec { steps })
    }

    pub fn steps(&self) -> &[OperatorConfig] {
        &self.steps
    }

    pub fn into_steps(self) -> Vec<OperatorConfig> {
        self.steps
    }

    /// Number of steps, the complexity measure used throughout.
    pub fn complexity(&self) -> usize {
        self.steps.len()
    }

    pub fn preprocessors(&self) -> &[OperatorConfig] {
        &self.steps[..self.steps.len() - 1]
    }

    pub fn clusterer(&self) -> &OperatorConfig {
        self.steps.last().expect("non-empty by invariant")
    }

    /// Canonical JSON of the step chain; stable key order, usable as a
    /// memoization key.
    pub fn to_canonical_string(&self) -> String {
        serde_json::to_string(self).expect("pipeline serialization cannot fail")
    }

    /// Short human-readable form, e.g. "MinMaxScaler -> KMeans(init=k-means++, n_clusters=3)".
    pub fn describe(&self) -> String {
        self.steps
            .iter()
            .map(|s| {
                if s.hyperparameters().is_empty() {
                    s.kind().name().to_string()
                } else {
                    let params: Vec<String> = s
                        .hyperparameters()
                        .iter()
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect();
                    format!("{}({})", s.kind(), params.join(", "))
                }
            })
            .collect::<Vec<_>>()
            .join(" -> ")
    }
}

fn ensure_finite(features: &Matrix) -> Result<()> {
    if !features.is_finite() {
        return Err(Error::InvalidInput(
            "feature matrix contains NaN or infinite values".to_string(),
        ));
    }
    Ok(())
}

/// Applies a non-terminal operator, returning the transformed matrix.
pub fn fit_transform(op: &OperatorConfig, features: &Matrix, rng: RngStream) -> Result<Matrix> {
    ensure_finite(features)?;
    match op.kind() {
        OperatorKind::MinMaxScaler => Ok(preprocess::minmax_scale(features)),
        OperatorKind::StandardScaler => Ok(preprocess::standard_scale(features)),
        OperatorKind::Normalizer => Ok(preprocess::normalize_rows(features, op.str_param("norm"))),
        OperatorKind::VarianceThreshold => Ok(preprocess::variance_threshold(
            features,
            op.f64_param("threshold"),
        )),
        OperatorKind::Pca => Ok(preprocess::pca(features, op.usize_param("n_components"))),
        OperatorKind::FastIca => preprocess::fast_ica(
            features,
            op.usize_param("n_components"),
            &mut rng.rng(),
        ),
        terminal => Err(Error::InvalidPipeline(format!(
            "{terminal} is a clusterer, not a transform"
        ))),
    }
}

/// Runs a terminal operator, returning a canonical partition of the rows.
pub fn cluster(op: &OperatorConfig, features: &Matrix, rng: RngStream) -> Result<Partition> {
    cluster_bounded(op, features, rng, Deadline::none())
}

/// [`cluster`] with a cooperative wall-clock budget.
pub fn cluster_bounded(
    op: &OperatorConfig,
    features: &Matrix,
    rng: RngStream,
    deadline: Deadline,
) -> Result<Partition> {
    ensure_finite(features)?;
    let n = features.nrows();
    if n < 2 {
        return Err(Error::ShapeError {
            context: "clustering rows",
            expected: 2,
            got: n,
        });
    }
    match op.kind() {
        OperatorKind::KMeans => {
            let init = match op.str_param("init") {
                "k-means++" => KMeansInit::PlusPlus,
                _ => KMeansInit::Random,
            };
            kmeans::kmeans(
                features,
                op.usize_param("n_clusters"),
                init,
                rng,
                deadline,
            )
        }
        OperatorKind::MiniBatchKMeans => kmeans::mini_batch_kmeans(
            features,
            op.usize_param("n_clusters"),
            op.usize_param("batch_size"),
            rng,
            deadline,
        ),
        OperatorKind::Dbscan => dbscan::dbscan(
            features,
            op.f64_param("eps"),
            op.usize_param("min_samples"),
            deadline,
        ),
        OperatorKind::Agglomerative => {
            agglomerative::ward(features, op.usize_param("n_clusters"), deadline)
        }
        OperatorKind::Spectral => spectral::spectral(
            features,
            op.usize_param("n_clusters"),
            op.str_param("affinity"),
            rng,
            deadline,
        ),
        transform => Err(Error::InvalidPipeline(format!(
            "{transform} is a transform, not a clusterer"
        ))),
    }
}

/// Applies a whole pipeline to a dataset: transforms chained in order, then
/// the clusterer. The result indexes the original rows. Step errors are
/// wrapped with their position.
pub fn apply_pipeline(
    pipeline: &PipelineSpec,
    dataset: &Dataset,
    rng: RngStream,
) -> Result<Partition> {
    apply_pipeline_bounded(pipeline, dataset, rng, Deadline::none())
}

/// [`apply_pipeline`] with a cooperative wall-clock budget.
pub fn apply_pipeline_bounded(
    pipeline: &PipelineSpec,
    dataset: &Dataset,
    rng: RngStream,
    deadline: Deadline,
) -> Result<Partition> {
    let wrap = |step: usize, kind: OperatorKind| {
        move |e: Error| Error::PipelineStep {
            step,
            kind: kind.name().to_string(),
            source: Box::new(e),
        }
    };
    let mut features = dataset.features().clone();
    for (i, op) in pipeline.preprocessors().iter().enumerate() {
        deadline.check()?;
        features = fit_transform(op, &features, rng.substream(i as u64))
            .map_err(wrap(i, op.kind()))?;
    }
    let last = pipeline.steps().len() - 1;
    let op = pipeline.clusterer();
    let partition = cluster_bounded(op, &features, rng.substream(last as u64), deadline)
        .map_err(wrap(last, op.kind()))?;
    debug_assert_eq!(partition.n(), dataset.n());
    Ok(partition)
}

/// Shared by DBSCAN's noise policy and k-means assignment: index of the
/// nearest centroid, ties broken by lowest index.
pub(crate) fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = crate::core::sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kmeans_config(k: i64) -> OperatorConfig {
        OperatorConfig::with_params(
            OperatorKind::KMeans,
            [
                ("n_clusters", HyperValue::Int(k)),
                ("init", HyperValue::text("k-means++")),
            ],
        )
        .unwrap()
    }

    #[test]
    fn grids_cover_all_operators() {
        let grids = default_grids();
        assert_eq!(grids.len(), 11);
        let terminals = grids.iter().filter(|g| g.kind.is_terminal()).count();
        assert_eq!(terminals, 5);
        // Every axis has at least two values: a grid with one value is not
        // a search dimension.
        for g in &grids {
            for axis in &g.params {
                assert!(axis.values.len() >= 2, "{}.{}", g.kind, axis.name);
            }
        }
    }

    #[test]
    fn operator_config_validates_against_grid() {
        assert!(kmeans_config(2).hyperparameters().len() == 2);
        assert!(matches!(
            OperatorConfig::with_params(
                OperatorKind::KMeans,
                [
                    ("n_clusters", HyperValue::Int(99)),
                    ("init", HyperValue::text("k-means++")),
                ],
            ),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(
            OperatorConfig::with_params(OperatorKind::KMeans, [("n_clusters", HyperValue::Int(3))]),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(
            OperatorConfig::with_params(
                OperatorKind::MinMaxScaler,
                [("bogus", HyperValue::Int(1))]
            ),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn pipeline_structure_enforced() {
        let km = kmeans_config(3);
        let mm = OperatorConfig::with_params(OperatorKind::MinMaxScaler, []).unwrap();

        assert!(PipelineSpec::new(vec![km.clone()]).is_ok());
        assert!(PipelineSpec::new(vec![mm.clone(), km.clone()]).is_ok());
        assert!(matches!(
            PipelineSpec::new(vec![]),
            Err(Error::InvalidPipeline(_))
        ));
        assert!(matches!(
            PipelineSpec::new(vec![mm.clone()]),
            Err(Error::InvalidPipeline(_))
        ));
        assert!(matches!(
            PipelineSpec::new(vec![km.clone(), mm.clone()]),
            Err(Error::InvalidPipeline(_))
        ));
        assert!(matches!(
            PipelineSpec::new(vec![km.clone(), km.clone()]),
            Err(Error::InvalidPipeline(_))
        ));
        assert!(matches!(
            PipelineSpec::new(vec![
                mm.clone(),
                mm.clone(),
                mm.clone(),
                mm.clone(),
                km.clone()
            ]),
            Err(Error::InvalidPipeline(_))
        ));
    }

    #[test]
    fn pipeline_json_round_trip() {
        let pipeline = PipelineSpec::new(vec![
            OperatorConfig::with_params(
                OperatorKind::Normalizer,
                [("norm", HyperValue::text("l2"))],
            )
            .unwrap(),
            OperatorConfig::with_params(
                OperatorKind::Dbscan,
                [
                    ("eps", HyperValue::Float(0.1)),
                    ("min_samples", HyperValue::Int(5)),
                ],
            )
            .unwrap(),
        ])
        .unwrap();
        let json = pipeline.to_canonical_string();
        let back: PipelineSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pipeline);
        // Stable key order: kind precedes hyperparameters, axes sorted.
        assert!(json.find("\"kind\"").unwrap() < json.find("\"hyperparameters\"").unwrap());
        assert!(json.find("\"eps\"").unwrap() < json.find("\"min_samples\"").unwrap());
    }

    #[test]
    fn invalid_pipeline_json_rejected() {
        let json = r#"{"steps":[{"kind":"KMeans","hyperparameters":{"n_clusters":99,"init":"random"}}]}"#;
        assert!(serde_json::from_str::<PipelineSpec>(json).is_err());
        let json = r#"{"steps":[{"kind":"MinMaxScaler","hyperparameters":{}}]}"#;
        assert!(serde_json::from_str::<PipelineSpec>(json).is_err());
    }

    fn four_point_dataset() -> Dataset {
        Dataset::new(
            "pairs".to_string(),
            Matrix::from_rows(&[
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![10.0, 0.0],
                vec![10.0, 1.0],
            ])
            .unwrap(),
            Some(vec![0, 0, 1, 1]),
        )
        .unwrap()
    }

    #[test]
    fn pipeline_recovers_blobs_after_scaling() {
        // The y spread (3) differs from the x spread (10), so min-max
        // scaling keeps the optimal 2-partition unique: the scaled
        // within-pair gaps stay below the scaled between-pair gap.
        let ds = Dataset::new(
            "pairs",
            Matrix::from_rows(&[
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![10.0, 0.0],
                vec![10.0, 3.0],
            ])
            .unwrap(),
            Some(vec![0, 0, 1, 1]),
        )
        .unwrap();
        let p = PipelineSpec::new(vec![
            OperatorConfig::with_params(OperatorKind::MinMaxScaler, []).unwrap(),
            kmeans_config(2),
        ])
        .unwrap();
        let part = apply_pipeline(&p, &ds, RngStream::new(1)).unwrap();
        assert_eq!(part.assignments(), &[0, 0, 1, 1]);
    }

    #[test]
    fn row_alignment_survives_column_dropping() {
        // VarianceThreshold drops a column; the partition still indexes
        // every original row.
        let ds = four_point_dataset();
        let p = PipelineSpec::new(vec![
            OperatorConfig::with_params(
                OperatorKind::VarianceThreshold,
                [("threshold", HyperValue::Float(0.25))],
            )
            .unwrap(),
            kmeans_config(2),
        ])
        .unwrap();
        let part = apply_pipeline(&p, &ds, RngStream::new(4)).unwrap();
        assert_eq!(part.n(), ds.n());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let ds = four_point_dataset();
        let p = PipelineSpec::new(vec![
            OperatorConfig::with_params(
                OperatorKind::Normalizer,
                [("norm", HyperValue::text("l2"))],
            )
            .unwrap(),
            OperatorConfig::with_params(
                OperatorKind::Spectral,
                [
                    ("n_clusters", HyperValue::Int(2)),
                    ("affinity", HyperValue::text("rbf")),
                ],
            )
            .unwrap(),
        ])
        .unwrap();
        let a = apply_pipeline(&p, &ds, RngStream::new(11)).unwrap();
        let b = apply_pipeline(&p, &ds, RngStream::new(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_errors_carry_their_position() {
        // k exceeds n at step 1.
        let ds = four_point_dataset();
        let p = PipelineSpec::new(vec![
            OperatorConfig::with_params(OperatorKind::MinMaxScaler, []).unwrap(),
            kmeans_config(5),
        ])
        .unwrap();
        match apply_pipeline(&p, &ds, RngStream::new(0)) {
            Err(Error::PipelineStep { step: 1, kind, source }) => {
                assert_eq!(kind, "KMeans");
                assert!(matches!(*source, Error::InfeasibleK { k: 5, n: 4 }));
            }
            other => panic!("expected wrapped step error, got {other:?}"),
        }
    }

    #[test]
    fn expired_deadline_stops_pipeline() {
        let ds = four_point_dataset();
        let p = PipelineSpec::new(vec![kmeans_config(2)]).unwrap();
        let deadline = Deadline::after(std::time::Duration::ZERO);
        std::thread::sleep(std::time::Duration::from_millis(2));
        assert!(apply_pipeline_bounded(&p, &ds, RngStream::new(0), deadline).is_err());
    }

    #[test]
    fn describe_is_readable() {
        let p = PipelineSpec::new(vec![
            OperatorConfig::with_params(OperatorKind::MinMaxScaler, []).unwrap(),
            kmeans_config(3),
        ])
        .unwrap();
        assert_eq!(
            p.describe(),
            "MinMaxScaler -> KMeans(init=k-means++, n_clusters=3)"
        );
    }
}
