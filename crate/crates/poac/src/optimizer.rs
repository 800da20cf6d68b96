//! Evolutionary pipeline synthesis. Candidates are linear chains of
//! preprocessing operators closed by one clusterer; fitness is either the
//! surrogate's predicted ARI (from meta-features plus the candidate's
//! measured SIL/DBS) or a raw CVI, per the configured mode. Selection is
//! tournament-based with single-individual elitism and a shorter-pipeline
//! tie-break.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use rand::Rng;
use rayon::prelude::*;

use crate::core::{fmt_float, label_hash, Dataset, PairwiseDistances, RngStream};
use crate::cvi::CviScores;
use crate::estimators::{
    apply_pipeline_bounded, grid_for, Deadline, OperatorConfig, OperatorGrid, OperatorKind,
    PipelineSpec,
};
use crate::metafeatures::{self, MetaFeatureVector};
use crate::surrogate::{FeatureLayout, SurrogateModel};
use crate::{Error, Result};

/// Stream ids under the run seed: the sequential evolution loop and the
/// per-candidate evaluation streams.
const LOOP_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;

/// How a candidate partition is scored.
#[derive(Clone, Debug)]
pub enum FitnessMode {
    /// Surrogate prediction from 38 meta-features + sil + dbs.
    Full(SurrogateModel),
    /// Surrogate prediction from sil + dbs alone.
    CviOnly(SurrogateModel),
    /// Raw silhouette.
    SilOnly,
    /// Negated Davies-Bouldin, so that higher is better throughout.
    DbsOnly,
}

impl FitnessMode {
    pub fn name(&self) -> &'static str {
        match self {
            FitnessMode::Full(_) => "full",
            FitnessMode::CviOnly(_) => "cvi",
            FitnessMode::SilOnly => "sil",
            FitnessMode::DbsOnly => "dbs",
        }
    }

    pub fn needs_metafeatures(&self) -> bool {
        matches!(self, FitnessMode::Full(_))
    }

    /// The attached model must have been trained on the layout the mode
    /// feeds it at evaluation time.
    pub fn validate(&self) -> Result<()> {
        let expected = match self {
            FitnessMode::Full(_) => FeatureLayout::Full.names(),
            FitnessMode::CviOnly(_) => FeatureLayout::CviOnly.names(),
            FitnessMode::SilOnly | FitnessMode::DbsOnly => return Ok(()),
        };
        let model = match self {
            FitnessMode::Full(m) | FitnessMode::CviOnly(m) => m,
            _ => unreachable!(),
        };
        if model.feature_names() != expected.as_slice() {
            return Err(Error::ConfigError(format!(
                "{} mode needs a model over {} features, got {}",
                self.name(),
                expected.len(),
                model.feature_names().len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub max_pipeline_length: usize,
    /// Wall-clock cap per candidate evaluation; None disables the guard.
    pub eval_budget: Option<Duration>,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population_size: 24,
            generations: 10,
            crossover_rate: 0.5,
            mutation_rate: 0.9,
            tournament_size: 3,
            max_pipeline_length: PipelineSpec::MAX_LEN,
            eval_budget: Some(Duration::from_secs(30)),
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 4 {
            return Err(Error::ConfigError(format!(
                "population size {} below minimum 4",
                self.population_size
            )));
        }
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::ConfigError(format!("{name} {rate} outside [0, 1]")));
            }
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return Err(Error::ConfigError(format!(
                "tournament size {} outside [1, population]",
                self.tournament_size
            )));
        }
        if self.max_pipeline_length == 0 || self.max_pipeline_length > PipelineSpec::MAX_LEN {
            return Err(Error::ConfigError(format!(
                "max pipeline length {} outside [1, {}]",
                self.max_pipeline_length,
                PipelineSpec::MAX_LEN
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    /// Mean over individuals with finite fitness; NaN when none succeeded.
    pub mean_fitness: f64,
    pub mean_complexity: f64,
    pub best: PipelineSpec,
}

#[derive(Clone, Debug, Default)]
pub struct RunTrace {
    pub generations: Vec<GenerationStats>,
}

impl RunTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "generation,best_fitness,mean_fitness,mean_complexity")?;
        for g in &self.generations {
            writeln!(
                w,
                "{},{},{},{}",
                g.generation,
                fmt_float(g.best_fitness),
                fmt_float(g.mean_fitness),
                fmt_float(g.mean_complexity)
            )?;
        }
        Ok(())
    }
}

/// The operator space the search is allowed to use: any subset of the
/// default grids (fewer operators, fewer axis values), never a superset.
pub struct SearchSpace<'a> {
    grids: &'a [OperatorGrid],
    terminals: Vec<&'a OperatorGrid>,
    preprocessors: Vec<&'a OperatorGrid>,
    max_len: usize,
}

impl<'a> SearchSpace<'a> {
    pub fn new(grids: &'a [OperatorGrid], max_len: usize) -> Result<Self> {
        for grid in grids {
            let full = grid_for(grid.kind);
            if grid.params.len() != full.params.len() {
                return Err(Error::ConfigError(format!(
                    "{}: grid must declare every hyperparameter axis",
                    grid.kind
                )));
            }
            for axis in &grid.params {
                let Some(full_axis) = full.params.iter().find(|a| a.name == axis.name) else {
                    return Err(Error::ConfigError(format!(
                        "{}: unknown hyperparameter {:?}",
                        grid.kind, axis.name
                    )));
                };
                if axis.values.is_empty() {
                    return Err(Error::ConfigError(format!(
                        "{}: axis {:?} has no values",
                        grid.kind, axis.name
                    )));
                }
                for v in &axis.values {
                    if !full_axis.values.contains(v) {
                        return Err(Error::ConfigError(format!(
                            "{}: value {v} not admissible for {:?}",
                            grid.kind, axis.name
                        )));
                    }
                }
            }
        }
        let terminals: Vec<&OperatorGrid> = grids.iter().filter(|g| g.kind.is_terminal()).collect();
        let preprocessors: Vec<&OperatorGrid> =
            grids.iter().filter(|g| !g.kind.is_terminal()).collect();
        if terminals.is_empty() {
            return Err(Error::ConfigError(
                "operator space contains no clusterer".to_string(),
            ));
        }
        if max_len == 0 || max_len > PipelineSpec::MAX_LEN {
            return Err(Error::ConfigError(format!(
                "max pipeline length {max_len} outside [1, {}]",
                PipelineSpec::MAX_LEN
            )));
        }
        Ok(SearchSpace {
            grids,
            terminals,
            preprocessors,
            max_len,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn grid_of(&self, kind: OperatorKind) -> Option<&OperatorGrid> {
        self.grids.iter().find(|g| g.kind == kind)
    }

    fn random_config(grid: &OperatorGrid, rng: &mut impl Rng) -> OperatorConfig {
        let params = grid
            .params
            .iter()
            .map(|axis| {
                let v = axis.values[rng.random_range(0..axis.values.len())].clone();
                (axis.name.to_string(), v)
            })
            .collect();
        OperatorConfig::new(grid.kind, params).expect("space values are admissible")
    }

    fn random_preprocessor(&self, rng: &mut impl Rng) -> OperatorConfig {
        let grid = self.preprocessors[rng.random_range(0..self.preprocessors.len())];
        Self::random_config(grid, rng)
    }

    fn random_terminal(&self, rng: &mut impl Rng) -> OperatorConfig {
        let grid = self.terminals[rng.random_range(0..self.terminals.len())];
        Self::random_config(grid, rng)
    }

    /// Length 1 with probability 1/2, else uniform over 2..=max; always a
    /// chain of preprocessors closed by one clusterer.
    pub fn random_pipeline(&self, rng: &mut impl Rng) -> PipelineSpec {
        let len = if self.preprocessors.is_empty()
            || self.max_len == 1
            || rng.random::<f64>() < 0.5
        {
            1
        } else {
            rng.random_range(2..=self.max_len)
        };
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len - 1 {
            steps.push(self.random_preprocessor(rng));
        }
        steps.push(self.random_terminal(rng));
        PipelineSpec::new(steps).expect("generated chain is well formed")
    }
}

/// One-point crossover: a preprocessor prefix of `a` spliced onto a
/// terminal-bearing suffix of `b`, with the prefix truncated so the child
/// respects `max_len`. Both cut choices and the repair are deterministic
/// given the rng.
pub fn crossover(
    a: &PipelineSpec,
    b: &PipelineSpec,
    max_len: usize,
    rng: &mut impl Rng,
) -> PipelineSpec {
    let a_steps = a.steps();
    let b_steps = b.steps();
    // cut1 < len(a) keeps a's terminal out of the prefix; any suffix of b
    // starting at cut2 <= len(b)-1 still ends with b's terminal.
    let cut1 = rng.random_range(0..a_steps.len());
    let cut2 = rng.random_range(0..b_steps.len());
    let suffix = &b_steps[cut2..];
    let keep = cut1.min(max_len - suffix.len().min(max_len));
    let mut steps = Vec::with_capacity(keep + suffix.len());
    steps.extend_from_slice(&a_steps[..keep]);
    steps.extend_from_slice(suffix);
    PipelineSpec::new(steps).expect("crossover preserves pipeline shape")
}

#[derive(Clone, Copy)]
enum Mutation {
    ReplaceStep,
    InsertPreprocessor,
    DeletePreprocessor,
    PerturbHyperparameter,
}

/// Applies one randomly chosen applicable mutation. A value not present in
/// the space's grid (possible when mutating a pipeline built elsewhere) is
/// repaired to a random admissible one.
pub fn mutate(spec: &PipelineSpec, space: &SearchSpace, rng: &mut impl Rng) -> PipelineSpec {
    let steps = spec.steps();
    let n_pre = steps.len() - 1;

    let mut menu = vec![Mutation::ReplaceStep];
    if n_pre < space.max_len - 1 && !space.preprocessors.is_empty() {
        menu.push(Mutation::InsertPreprocessor);
    }
    if n_pre >= 1 {
        menu.push(Mutation::DeletePreprocessor);
    }
    let perturbable: Vec<(usize, usize)> = steps
        .iter()
        .enumerate()
        .flat_map(|(i, st)| {
            let axes = space
                .grid_of(st.kind())
                .map(|g| g.params.as_slice())
                .unwrap_or(&[]);
            axes.iter()
                .enumerate()
                .filter(|(_, ax)| ax.values.len() >= 2)
                .map(move |(j, _)| (i, j))
                .collect::<Vec<_>>()
        })
        .collect();
    if !perturbable.is_empty() {
        menu.push(Mutation::PerturbHyperparameter);
    }

    let mut new_steps = steps.to_vec();
    match menu[rng.random_range(0..menu.len())] {
        Mutation::ReplaceStep => {
            let pos = rng.random_range(0..new_steps.len());
            new_steps[pos] = if pos == new_steps.len() - 1 {
                space.random_terminal(rng)
            } else {
                space.random_preprocessor(rng)
            };
        }
        Mutation::InsertPreprocessor => {
            let pos = rng.random_range(0..=n_pre);
            new_steps.insert(pos, space.random_preprocessor(rng));
        }
        Mutation::DeletePreprocessor => {
            let pos = rng.random_range(0..n_pre);
            new_steps.remove(pos);
        }
        Mutation::PerturbHyperparameter => {
            let (i, j) = perturbable[rng.random_range(0..perturbable.len())];
            let grid = space.grid_of(new_steps[i].kind()).expect("axis came from this grid");
            let axis = &grid.params[j];
            let current = &new_steps[i].hyperparameters()[axis.name];
            let idx = axis.values.iter().position(|v| v == current);
            let new_idx = match idx {
                Some(0) => 1,
                Some(k) if k == axis.values.len() - 1 => k - 1,
                Some(k) => {
                    if rng.random::<bool>() {
                        k + 1
                    } else {
                        k - 1
                    }
                }
                None => rng.random_range(0..axis.values.len()),
            };
            let mut params = new_steps[i].hyperparameters().clone();
            params.insert(axis.name.to_string(), axis.values[new_idx].clone());
            new_steps[i] =
                OperatorConfig::new(grid.kind, params).expect("neighbor value is admissible");
        }
    }
    PipelineSpec::new(new_steps).expect("mutation preserves pipeline shape")
}

struct EvalContext<'a> {
    dataset: &'a Dataset,
    mu: Option<&'a MetaFeatureVector>,
    pd: &'a PairwiseDistances,
    mode: &'a FitnessMode,
    budget: Option<Duration>,
}

/// Worst-fitness sentinel ordering rank for failed, degenerate, or
/// timed-out candidates.
pub const WORST_FITNESS: f64 = f64::NEG_INFINITY;

fn fitness_of(candidate: &PipelineSpec, ctx: &EvalContext, stream: RngStream) -> f64 {
    let deadline = match ctx.budget {
        Some(b) => Deadline::after(b),
        None => Deadline::none(),
    };
    let partition = match apply_pipeline_bounded(candidate, ctx.dataset, stream, deadline) {
        Ok(p) => p,
        Err(e) => {
            log::debug!("candidate {} discarded: {e}", candidate.describe());
            return WORST_FITNESS;
        }
    };
    let k = partition.k();
    if k < 2 || k > ctx.dataset.n() - 1 {
        return WORST_FITNESS;
    }
    let scores = CviScores::measure(ctx.dataset, &partition, ctx.pd);
    let raw = match ctx.mode {
        FitnessMode::Full(model) => match ctx.mu {
            Some(mu) => {
                let mut features = mu.values().to_vec();
                features.push(scores.sil);
                features.push(scores.dbs);
                model.predict(&features).unwrap_or(WORST_FITNESS)
            }
            None => {
                log::debug!("full mode evaluated without meta-features");
                WORST_FITNESS
            }
        },
        FitnessMode::CviOnly(model) => model
            .predict(&[scores.sil, scores.dbs])
            .unwrap_or(WORST_FITNESS),
        FitnessMode::SilOnly => scores.sil,
        FitnessMode::DbsOnly => -scores.dbs,
    };
    if raw.is_finite() {
        raw
    } else {
        WORST_FITNESS
    }
}

/// Scores one candidate on one dataset. The partition comes from running
/// the pipeline; SIL/DBS are measured on the original features; the mode
/// maps them to a scalar. Any failure (step error, degenerate partition,
/// budget overrun, undefined CVI under SilOnly/DbsOnly) yields the worst
/// sentinel rather than an error.
pub fn evaluate(
    candidate: &PipelineSpec,
    dataset: &Dataset,
    mu: Option<&MetaFeatureVector>,
    mode: &FitnessMode,
    stream: RngStream,
    budget: Option<Duration>,
) -> f64 {
    let pd = PairwiseDistances::compute(dataset.features());
    let ctx = EvalContext {
        dataset,
        mu,
        pd: &pd,
        mode,
        budget,
    };
    fitness_of(candidate, &ctx, stream)
}

/// The evaluation stream `evolve` with this seed would use for the given
/// genome; re-running the pipeline on it reproduces the exact partition
/// behind a reported fitness.
pub fn candidate_stream(seed: u64, candidate: &PipelineSpec) -> RngStream {
    RngStream::new(seed)
        .substream(EVAL_STREAM)
        .substream(label_hash(candidate.to_canonical_string().as_bytes()))
}

/// Strictly better: higher fitness, then shorter pipeline, then canonical
/// text order. Total and independent of evaluation schedule.
fn is_better(fa: f64, pa: &PipelineSpec, fb: f64, pb: &PipelineSpec) -> bool {
    match fa.total_cmp(&fb) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => match pa.complexity().cmp(&pb.complexity()) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => pa.to_canonical_string() < pb.to_canonical_string(),
        },
    }
}

/// Evaluates a population, reusing memoized fitnesses. Fresh genomes are
/// deduplicated, sorted, and scored in parallel with streams derived from
/// the genome text, so results do not depend on thread schedule.
fn evaluate_population(
    pop: &[PipelineSpec],
    ctx: &EvalContext,
    eval_root: RngStream,
    memo: &mut HashMap<String, f64>,
) -> Vec<f64> {
    let canons: Vec<String> = pop.iter().map(|p| p.to_canonical_string()).collect();
    let mut fresh: BTreeMap<&str, &PipelineSpec> = BTreeMap::new();
    for (canon, spec) in canons.iter().zip(pop) {
        if !memo.contains_key(canon.as_str()) {
            fresh.entry(canon.as_str()).or_insert(spec);
        }
    }
    let jobs: Vec<(&str, &PipelineSpec)> = fresh.into_iter().collect();
    let scored: Vec<(String, f64)> = jobs
        .into_par_iter()
        .map(|(canon, spec)| {
            let stream = eval_root.substream(label_hash(canon.as_bytes()));
            (canon.to_string(), fitness_of(spec, ctx, stream))
        })
        .collect();
    memo.extend(scored);
    canons.iter().map(|c| memo[c.as_str()]).collect()
}

fn argbest(pop: &[PipelineSpec], fits: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..pop.len() {
        if is_better(fits[i], &pop[i], fits[best], &pop[best]) {
            best = i;
        }
    }
    best
}

fn tournament(
    pop: &[PipelineSpec],
    fits: &[f64],
    size: usize,
    rng: &mut impl Rng,
) -> usize {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..size {
        let c = rng.random_range(0..pop.len());
        if is_better(fits[c], &pop[c], fits[best], &pop[best]) {
            best = c;
        }
    }
    best
}

fn record(trace: &mut RunTrace, generation: usize, pop: &[PipelineSpec], fits: &[f64]) {
    let best = argbest(pop, fits);
    let finite: Vec<f64> = fits.iter().copied().filter(|f| f.is_finite()).collect();
    let mean_fitness = if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let mean_complexity =
        pop.iter().map(|p| p.complexity() as f64).sum::<f64>() / pop.len() as f64;
    trace.generations.push(GenerationStats {
        generation,
        best_fitness: fits[best],
        mean_fitness,
        mean_complexity,
        best: pop[best].clone(),
    });
}

/// Runs the evolutionary search and returns the best-ever individual with
/// the per-generation trace. Identical (dataset, config seed) inputs give
/// identical outputs regardless of thread count.
pub fn evolve(
    dataset: &Dataset,
    mode: &FitnessMode,
    cfg: &EvolutionConfig,
    grids: &[OperatorGrid],
) -> Result<(PipelineSpec, RunTrace)> {
    cfg.validate()?;
    mode.validate()?;
    let space = SearchSpace::new(grids, cfg.max_pipeline_length)?;

    let mu = if mode.needs_metafeatures() {
        Some(metafeatures::extract(dataset)?)
    } else {
        None
    };
    let pd = PairwiseDistances::compute(dataset.features());
    let ctx = EvalContext {
        dataset,
        mu: mu.as_ref(),
        pd: &pd,
        mode,
        budget: cfg.eval_budget,
    };

    let root = RngStream::new(cfg.seed);
    let eval_root = root.substream(EVAL_STREAM);
    let mut rng = root.substream(LOOP_STREAM).rng();
    let mut memo: HashMap<String, f64> = HashMap::new();
    let mut trace = RunTrace::default();

    let mut pop: Vec<PipelineSpec> = (0..cfg.population_size)
        .map(|_| space.random_pipeline(&mut rng))
        .collect();
    let mut fits = evaluate_population(&pop, &ctx, eval_root, &mut memo);
    record(&mut trace, 0, &pop, &fits);
    let mut best_idx = argbest(&pop, &fits);
    let mut best = (pop[best_idx].clone(), fits[best_idx]);

    for generation in 1..=cfg.generations {
        let mut next = Vec::with_capacity(cfg.population_size);
        next.push(pop[best_idx].clone());
        while next.len() < cfg.population_size {
            let p1 = tournament(&pop, &fits, cfg.tournament_size, &mut rng);
            let mut child = if rng.random::<f64>() < cfg.crossover_rate {
                let p2 = tournament(&pop, &fits, cfg.tournament_size, &mut rng);
                crossover(&pop[p1], &pop[p2], space.max_len, &mut rng)
            } else {
                pop[p1].clone()
            };
            if rng.random::<f64>() < cfg.mutation_rate {
                child = mutate(&child, &space, &mut rng);
            }
            next.push(child);
        }
        pop = next;
        fits = evaluate_population(&pop, &ctx, eval_root, &mut memo);
        record(&mut trace, generation, &pop, &fits);
        best_idx = argbest(&pop, &fits);
        if is_better(fits[best_idx], &pop[best_idx], best.1, &best.0) {
            best = (pop[best_idx].clone(), fits[best_idx]);
        }
    }
    Ok((best.0, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Matrix;
    use crate::estimators::{default_grids, HyperValue, ParamGrid};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(centers: &[(f64, f64)], per: usize, spread: f64, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed).rng();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                rows.push(vec![cx + spread * dx, cy + spread * dy]);
                labels.push(c);
            }
        }
        let m = Matrix::from_rows(&rows).unwrap();
        Dataset::new("blobs", m, Some(labels)).unwrap()
    }

    fn four_point_dataset() -> Dataset {
        let m = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ])
        .unwrap();
        Dataset::new("four", m, None).unwrap()
    }

    fn kmeans_grid(ks: std::ops::RangeInclusive<i64>) -> OperatorGrid {
        OperatorGrid {
            kind: OperatorKind::KMeans,
            params: vec![
                ParamGrid {
                    name: "n_clusters",
                    values: ks.map(HyperValue::Int).collect(),
                },
                ParamGrid {
                    name: "init",
                    values: vec![HyperValue::text("k-means++")],
                },
            ],
        }
    }

    fn kmeans_pipeline(k: i64) -> PipelineSpec {
        let mut params = std::collections::BTreeMap::new();
        params.insert("n_clusters".to_string(), HyperValue::Int(k));
        params.insert("init".to_string(), HyperValue::text("k-means++"));
        PipelineSpec::new(vec![OperatorConfig::new(OperatorKind::KMeans, params).unwrap()])
            .unwrap()
    }

    #[test]
    fn sil_only_fitness_matches_hand_value() {
        // KMeans k=2 splits the 4-point fixture by the 10-wide gap; the
        // silhouette of that partition is the cvi module's hand value.
        let ds = four_point_dataset();
        let f = evaluate(
            &kmeans_pipeline(2),
            &ds,
            None,
            &FitnessMode::SilOnly,
            RngStream::new(3),
            None,
        );
        assert!((f - 0.9002487577582209).abs() <= 1e-12, "fitness {f}");
    }

    #[test]
    fn degenerate_candidate_ranks_below_any_valid_one() {
        // k = n forces singleton clusters, outside the CVI-defined range.
        let ds = four_point_dataset();
        let degenerate = evaluate(
            &kmeans_pipeline(4),
            &ds,
            None,
            &FitnessMode::SilOnly,
            RngStream::new(3),
            None,
        );
        assert_eq!(degenerate, WORST_FITNESS);
        let valid = evaluate(
            &kmeans_pipeline(2),
            &ds,
            None,
            &FitnessMode::SilOnly,
            RngStream::new(3),
            None,
        );
        assert!(valid > degenerate);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let ds = blobs(&[(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)], 20, 0.5, 5);
        let spec = kmeans_pipeline(3);
        let a = evaluate(&spec, &ds, None, &FitnessMode::SilOnly, RngStream::new(9), None);
        let b = evaluate(&spec, &ds, None, &FitnessMode::SilOnly, RngStream::new(9), None);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn dbs_only_prefers_lower_davies_bouldin() {
        let ds = blobs(&[(0.0, 0.0), (10.0, 0.0)], 25, 0.4, 11);
        // k=2 matches the geometry; k=5 shreds the blobs and scores worse.
        let good = evaluate(
            &kmeans_pipeline(2),
            &ds,
            None,
            &FitnessMode::DbsOnly,
            RngStream::new(1),
            None,
        );
        let bad = evaluate(
            &kmeans_pipeline(5),
            &ds,
            None,
            &FitnessMode::DbsOnly,
            RngStream::new(1),
            None,
        );
        assert!(good > bad, "good {good} bad {bad}");
    }

    #[test]
    fn evolve_finds_exhaustive_optimum_on_small_space() {
        let ds = blobs(&[(0.0, 0.0), (9.0, 0.0), (0.0, 9.0)], 20, 0.5, 21);
        let grids = vec![kmeans_grid(2..=6)];
        let cfg = EvolutionConfig {
            population_size: 8,
            generations: 5,
            eval_budget: None,
            seed: 0,
            ..EvolutionConfig::default()
        };

        // Brute force over the 5-point space with the same tie-break.
        let mut oracle: Option<(PipelineSpec, f64)> = None;
        for k in 2..=6 {
            let spec = kmeans_pipeline(k);
            let stream = candidate_stream(cfg.seed, &spec);
            let f = evaluate(&spec, &ds, None, &FitnessMode::SilOnly, stream, None);
            if oracle
                .as_ref()
                .is_none_or(|(s, of)| is_better(f, &spec, *of, s))
            {
                oracle = Some((spec, f));
            }
        }
        let (oracle_spec, oracle_fit) = oracle.unwrap();

        let mut hits = 0;
        for seed in 0..6 {
            let cfg = EvolutionConfig { seed, ..cfg.clone() };
            let (best, trace) = evolve(&ds, &FitnessMode::SilOnly, &cfg, &grids).unwrap();
            if best == oracle_spec {
                hits += 1;
            }
            let last = trace.generations.last().unwrap();
            assert!(last.best_fitness >= oracle_fit - 1e-12 || best != oracle_spec);
        }
        assert!(hits >= 5, "optimum found in {hits}/6 seeds");
        assert_eq!(oracle_spec, kmeans_pipeline(3));
    }

    #[test]
    fn elitism_keeps_best_fitness_non_decreasing() {
        let ds = blobs(&[(0.0, 0.0), (7.0, 0.0)], 15, 0.6, 2);
        let cfg = EvolutionConfig {
            population_size: 10,
            generations: 6,
            eval_budget: None,
            seed: 4,
            ..EvolutionConfig::default()
        };
        let grids = default_grids();
        let (_, trace) = evolve(&ds, &FitnessMode::SilOnly, &cfg, &grids).unwrap();
        assert_eq!(trace.generations.len(), cfg.generations + 1);
        for w in trace.generations.windows(2) {
            assert!(
                w[1].best_fitness >= w[0].best_fitness,
                "best fitness regressed: {} -> {}",
                w[0].best_fitness,
                w[1].best_fitness
            );
        }
    }

    #[test]
    fn evolve_is_deterministic_across_thread_counts() {
        let ds = blobs(&[(0.0, 0.0), (6.0, 0.0), (3.0, 6.0)], 12, 0.5, 8);
        let cfg = EvolutionConfig {
            population_size: 8,
            generations: 3,
            eval_budget: None,
            seed: 17,
            ..EvolutionConfig::default()
        };
        let grids = default_grids();
        let (best_par, trace_par) = evolve(&ds, &FitnessMode::SilOnly, &cfg, &grids).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let (best_one, trace_one) =
            single.install(|| evolve(&ds, &FitnessMode::SilOnly, &cfg, &grids).unwrap());
        assert_eq!(best_par, best_one);
        assert_eq!(trace_par.generations.len(), trace_one.generations.len());
        for (a, b) in trace_par.generations.iter().zip(&trace_one.generations) {
            assert_eq!(a.best_fitness.to_bits(), b.best_fitness.to_bits());
            assert_eq!(a.mean_fitness.to_bits(), b.mean_fitness.to_bits());
            assert_eq!(a.best, b.best);
        }
    }

    #[test]
    fn trace_csv_has_one_row_per_generation() {
        let ds = blobs(&[(0.0, 0.0), (7.0, 0.0)], 10, 0.5, 3);
        let cfg = EvolutionConfig {
            population_size: 6,
            generations: 2,
            tournament_size: 2,
            eval_budget: None,
            seed: 1,
            ..EvolutionConfig::default()
        };
        let (_, trace) = evolve(&ds, &FitnessMode::SilOnly, &cfg, &default_grids()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "generation,best_fitness,mean_fitness,mean_complexity");
        assert_eq!(lines.len(), 1 + cfg.generations + 1);
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn config_and_space_validation() {
        let ds = four_point_dataset();
        let bad_pop = EvolutionConfig {
            population_size: 2,
            ..EvolutionConfig::default()
        };
        assert!(matches!(
            evolve(&ds, &FitnessMode::SilOnly, &bad_pop, &default_grids()),
            Err(Error::ConfigError(_))
        ));

        // No clusterer in the space.
        let pre_only = vec![grid_for(OperatorKind::MinMaxScaler)];
        assert!(matches!(
            SearchSpace::new(&pre_only, 4),
            Err(Error::ConfigError(_))
        ));

        // Value outside the declared grid.
        let bogus = vec![OperatorGrid {
            kind: OperatorKind::KMeans,
            params: vec![
                ParamGrid {
                    name: "n_clusters",
                    values: vec![HyperValue::Int(999)],
                },
                ParamGrid {
                    name: "init",
                    values: vec![HyperValue::text("k-means++")],
                },
            ],
        }];
        assert!(matches!(
            SearchSpace::new(&bogus, 4),
            Err(Error::ConfigError(_))
        ));

        // Missing axis.
        let partial = vec![OperatorGrid {
            kind: OperatorKind::KMeans,
            params: vec![ParamGrid {
                name: "n_clusters",
                values: vec![HyperValue::Int(3)],
            }],
        }];
        assert!(matches!(
            SearchSpace::new(&partial, 4),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn mode_validation_checks_model_layout() {
        use crate::metabase::MetaBaseRow;
        use crate::metafeatures::{MetaFeatureVector, META_FEATURE_NAMES};
        let rows: Vec<MetaBaseRow> = (0..60)
            .map(|i| MetaBaseRow {
                dataset_id: format!("d{:02}", i / 10),
                noise_level: (i % 10) as f64 / 9.0,
                metafeatures: MetaFeatureVector::from_values(vec![
                    0.0;
                    META_FEATURE_NAMES.len()
                ])
                .unwrap(),
                sil: (i as f64 * 0.37).sin(),
                dbs: 1.0,
                ari: (i as f64 * 0.37).sin(),
            })
            .collect();
        let cvi_model = crate::surrogate::fit(
            &rows,
            FeatureLayout::CviOnly,
            &crate::surrogate::ForestParams::default(),
            0,
        )
        .unwrap();
        // A 2-feature model attached to the 40-feature mode must be refused.
        assert!(matches!(
            FitnessMode::Full(cvi_model.clone()).validate(),
            Err(Error::ConfigError(_))
        ));
        assert!(FitnessMode::CviOnly(cvi_model).validate().is_ok());
    }

    #[test]
    fn memoization_skips_reevaluation() {
        let ds = four_point_dataset();
        let pd = PairwiseDistances::compute(ds.features());
        let mode = FitnessMode::SilOnly;
        let ctx = EvalContext {
            dataset: &ds,
            mu: None,
            pd: &pd,
            mode: &mode,
            budget: None,
        };
        let spec = kmeans_pipeline(2);
        let pop = vec![spec.clone(), spec.clone(), kmeans_pipeline(3)];
        let mut memo = HashMap::new();
        let fits = evaluate_population(&pop, &ctx, RngStream::new(0), &mut memo);
        assert_eq!(memo.len(), 2, "duplicates share one memo entry");
        assert_eq!(fits[0].to_bits(), fits[1].to_bits());
        // A poisoned cache value must be returned verbatim: proof that the
        // cache, not a recomputation, serves repeated genomes.
        let canon = spec.to_canonical_string();
        memo.insert(canon, 0.123456789);
        let again = evaluate_population(&pop, &ctx, RngStream::new(0), &mut memo);
        assert_eq!(again[0], 0.123456789);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        // Closure: arbitrary interleavings of crossover and mutation keep
        // every genome a valid pipeline (constructors enforce shape, so
        // reaching the assertions at all is the property).
        #[test]
        fn variation_operators_are_closed(seed in any::<u64>()) {
            let grids = default_grids();
            let space = SearchSpace::new(&grids, 4).unwrap();
            let mut rng = RngStream::new(seed).rng();
            let mut a = space.random_pipeline(&mut rng);
            let mut b = space.random_pipeline(&mut rng);
            for _ in 0..40 {
                let child = if rng.random::<bool>() {
                    crossover(&a, &b, space.max_len(), &mut rng)
                } else {
                    mutate(&a, &space, &mut rng)
                };
                prop_assert!(child.complexity() >= 1 && child.complexity() <= 4);
                prop_assert!(child.clusterer().kind().is_terminal());
                for step in child.preprocessors() {
                    prop_assert!(!step.kind().is_terminal());
                }
                b = std::mem::replace(&mut a, child);
            }
        }
    }
}
