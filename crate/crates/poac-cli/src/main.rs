//! Command-line front end: one subcommand per pipeline stage, from corpus
//! synthesis through the final rank statistics. All log lines go to
//! standard error; data only ever goes to the files named by flags.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 1 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use poac::core::{load_csv, Dataset};
use poac::datagen::{generate_corpus, DatasetSpecRanges};
use poac::estimators::{apply_pipeline_bounded, default_grids, Deadline};
use poac::evalstats::{pivot_ari, run_ablation, stats_report, summarize, ResultTable};
use poac::metabase;
use poac::optimizer::{candidate_stream, evolve, EvolutionConfig, FitnessMode};
use poac::surrogate::{cross_validate, fit, FeatureLayout, ForestParams, SurrogateModel};
use poac::{Error, Result};

#[derive(Parser)]
#[command(
    name = "poac",
    version,
    about = "Problem-oriented AutoML for clustering: corpus synthesis, surrogate training, evolutionary pipeline search, ablation statistics"
)]
struct Cli {
    /// Worker threads for parallel stages. Defaults to the POAC_THREADS
    /// environment variable, then to the hardware thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled dataset corpus into a directory.
    Synth(SynthArgs),
    /// Build the meta-knowledge base from a labeled corpus.
    Metabase(MetabaseArgs),
    /// Train and cross-validate the surrogate model on a meta-base.
    Train(TrainArgs),
    /// Evolve a clustering pipeline for a single dataset.
    Optimize(OptimizeArgs),
    /// Run the fitness-mode ablation over a labeled corpus.
    Evaluate(EvaluateArgs),
    /// Friedman test and Nemenyi critical distance over a results table.
    Stats(StatsArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of datasets to generate.
    #[arg(long)]
    count: usize,
    /// Which sampling ranges to draw specs from.
    #[arg(long, value_enum, default_value_t = RangesChoice::Training)]
    ranges: RangesChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives one CSV per dataset plus manifest.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RangesChoice {
    /// Ranges used for the meta-knowledge training corpus.
    Training,
    /// Wider-shaped ranges for held-out validation datasets.
    Validation,
}

#[derive(Args)]
struct MetabaseArgs {
    /// Directory of labeled dataset CSVs (as written by synth).
    #[arg(long)]
    datasets: PathBuf,
    /// Corrupted partitions generated per dataset.
    #[arg(long, default_value_t = 100)]
    corruptions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output meta-base CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Meta-base CSV produced by the metabase subcommand.
    #[arg(long)]
    metabase: PathBuf,
    /// Grouped cross-validation folds (grouped by source dataset).
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Feature layout the model is trained on.
    #[arg(long, value_enum, default_value_t = LayoutChoice::Full)]
    features: LayoutChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model JSON.
    #[arg(long)]
    out_model: PathBuf,
    /// Output per-fold cross-validation CSV.
    #[arg(long)]
    out_cv: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutChoice {
    /// All meta-features plus the two internal validity indices.
    Full,
    /// The two internal validity indices alone.
    Cvi,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Dataset CSV; a trailing label column is dropped before the search.
    #[arg(long)]
    data: PathBuf,
    /// Surrogate model JSON; required by modes full and cvi.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Fitness mode steering the search.
    #[arg(long, value_enum)]
    mode: ModeChoice,
    /// Population size.
    #[arg(long, default_value_t = 24)]
    pop: usize,
    /// Number of generations.
    #[arg(long, default_value_t = 10)]
    gens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON for the winning pipeline.
    #[arg(long)]
    out_pipeline: PathBuf,
    /// Output CSV (row_index,label) for the winning partition.
    #[arg(long)]
    out_labels: PathBuf,
    /// Output CSV with per-generation search statistics.
    #[arg(long)]
    out_trace: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeChoice {
    /// Surrogate prediction from meta-features plus both validity indices.
    Full,
    /// Surrogate prediction from the two validity indices alone.
    Cvi,
    /// Raw silhouette.
    Sil,
    /// Negated Davies-Bouldin.
    Dbs,
}

impl ModeChoice {
    fn flag_name(self) -> &'static str {
        match self {
            ModeChoice::Full => "full",
            ModeChoice::Cvi => "cvi",
            ModeChoice::Sil => "sil",
            ModeChoice::Dbs => "dbs",
        }
    }

    fn needs_model(self) -> bool {
        matches!(self, ModeChoice::Full | ModeChoice::Cvi)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of labeled dataset CSVs.
    #[arg(long)]
    datasets: PathBuf,
    /// Surrogate model JSON for the full mode.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Surrogate model JSON for the cvi mode (trained with --features cvi).
    #[arg(long)]
    cvi_model: Option<PathBuf>,
    /// Comma-separated fitness modes to compare.
    #[arg(long, default_value = "full,cvi,sil,dbs")]
    modes: String,
    /// Independent repetitions per (dataset, mode).
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output results CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Results CSV produced by the evaluate subcommand.
    #[arg(long)]
    results: PathBuf,
    /// Significance level for the Nemenyi critical distance.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Output plain-text report.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ConfigError(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::ConfigError(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args, threads),
        Command::Metabase(args) => cmd_metabase(args, threads),
        Command::Train(args) => cmd_train(args, threads),
        Command::Optimize(args) => cmd_optimize(args, threads),
        Command::Evaluate(args) => cmd_evaluate(args, threads),
        Command::Stats(args) => cmd_stats(args, threads),
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("POAC_THREADS") {
            Ok(text) => text.trim().parse::<usize>().map_err(|_| {
                Error::ConfigError(format!("POAC_THREADS {text:?} is not a positive integer"))
            })?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(Error::ConfigError(
            "--threads (or POAC_THREADS) must be at least 1".to_string(),
        ));
    }
    Ok(n)
}

/// Echoes the effective configuration next to the command's primary
/// output. Content is deterministic: no timestamps, sorted keys.
fn write_run_manifest(path: &Path, command: &str, threads: usize, params: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "command": command,
        "threads": threads,
        "params": params,
    });
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::FormatError(format!("run manifest: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Manifest path for a command whose primary output is a file.
fn manifest_beside(primary: &Path) -> PathBuf {
    let mut name = primary
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(".run.json");
    primary.with_file_name(name)
}

fn cmd_synth(args: SynthArgs, threads: usize) -> Result<()> {
    if args.count == 0 {
        return Err(Error::ConfigError("--count must be at least 1".to_string()));
    }
    let ranges = match args.ranges {
        RangesChoice::Training => DatasetSpecRanges::training(),
        RangesChoice::Validation => DatasetSpecRanges::validation(),
    };
    let entries = generate_corpus(args.count, &ranges, args.seed, &args.out)?;
    info!("wrote {} datasets and manifest.csv to {}", entries.len(), args.out.display());
    write_run_manifest(
        &args.out.join("run_manifest.json"),
        "synth",
        threads,
        json!({
            "count": args.count,
            "ranges": match args.ranges {
                RangesChoice::Training => "training",
                RangesChoice::Validation => "validation",
            },
            "seed": args.seed,
            "out": args.out.display().to_string(),
        }),
    )
}

/// Loads every dataset CSV in `dir` (manifests excluded), in name order.
fn load_corpus(dir: &Path) -> Result<Vec<Dataset>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_stem().is_none_or(|s| s != "manifest")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::ConfigError(format!(
            "--datasets: no dataset CSVs in {}",
            dir.display()
        )));
    }
    paths.iter().map(load_csv).collect()
}

fn cmd_metabase(args: MetabaseArgs, threads: usize) -> Result<()> {
    let datasets = load_corpus(&args.datasets)?;
    info!("building meta-base from {} datasets x {} corruptions", datasets.len(), args.corruptions);
    let rows = metabase::build(&datasets, args.corruptions, args.seed)?;
    metabase::write_csv(&rows, &args.out)?;
    info!("wrote {} rows to {}", rows.len(), args.out.display());
    write_run_manifest(
        &manifest_beside(&args.out),
        "metabase",
        threads,
        json!({
            "datasets": args.datasets.display().to_string(),
            "corruptions": args.corruptions,
            "seed": args.seed,
            "out": args.out.display().to_string(),
        }),
    )
}

fn cmd_train(args: TrainArgs, threads: usize) -> Result<()> {
    let rows = metabase::read_csv(&args.metabase)?;
    let layout = match args.features {
        LayoutChoice::Full => FeatureLayout::Full,
        LayoutChoice::Cvi => FeatureLayout::CviOnly,
    };
    let params = ForestParams::default();
    let report = cross_validate(&rows, layout, &params, args.folds, args.seed)?;
    info!(
        "grouped {}-fold cv: r2 = {:.4}, mse = {:.6}",
        args.folds, report.r2, report.mse
    );
    let model = fit(&rows, layout, &params, args.seed)?;
    for (name, weight) in model.feature_importance().iter().take(3) {
        info!("importance {name} = {weight:.4}");
    }
    model.save(&args.out_model)?;

    let mut cv = String::from("fold,r2,mse\n");
    for (i, fold) in report.fold_scores.iter().enumerate() {
        cv.push_str(&format!(
            "{i},{},{}\n",
            poac::core::fmt_float(fold.r2),
            poac::core::fmt_float(fold.mse)
        ));
    }
    cv.push_str(&format!(
        "mean,{},{}\n",
        poac::core::fmt_float(report.r2),
        poac::core::fmt_float(report.mse)
    ));
    std::fs::write(&args.out_cv, cv)?;
    info!("wrote {} and {}", args.out_model.display(), args.out_cv.display());

    write_run_manifest(
        &manifest_beside(&args.out_model),
        "train",
        threads,
        json!({
            "metabase": args.metabase.display().to_string(),
            "folds": args.folds,
            "features": match args.features {
                LayoutChoice::Full => "full",
                LayoutChoice::Cvi => "cvi",
            },
            "seed": args.seed,
            "out_model": args.out_model.display().to_string(),
            "out_cv": args.out_cv.display().to_string(),
        }),
    )
}

/// Builds the fitness mode, enforcing that a model is given exactly when
/// the mode consumes one.
fn build_mode(choice: ModeChoice, model: Option<&PathBuf>) -> Result<FitnessMode> {
    match (choice.needs_model(), model) {
        (true, None) => Err(Error::ConfigError(format!(
            "--mode {} requires --model",
            choice.flag_name()
        ))),
        (false, Some(_)) => Err(Error::ConfigError(format!(
            "--model is only used with --mode full or cvi, not {}",
            choice.flag_name()
        ))),
        (false, None) => Ok(match choice {
            ModeChoice::Sil => FitnessMode::SilOnly,
            ModeChoice::Dbs => FitnessMode::DbsOnly,
            _ => unreachable!(),
        }),
        (true, Some(path)) => {
            let model = SurrogateModel::load(path)?;
            Ok(match choice {
                ModeChoice::Full => FitnessMode::Full(model),
                ModeChoice::Cvi => FitnessMode::CviOnly(model),
                _ => unreachable!(),
            })
        }
    }
}

fn cmd_optimize(args: OptimizeArgs, threads: usize) -> Result<()> {
    let mode = build_mode(args.mode, args.model.as_ref())?;
    // Ground truth must not steer the search; drop any label column here,
    // before the dataset ever reaches the optimizer.
    let dataset = load_csv(&args.data)?.without_labels();
    let cfg = EvolutionConfig {
        population_size: args.pop,
        generations: args.gens,
        seed: args.seed,
        ..EvolutionConfig::default()
    };
    let grids = default_grids();
    info!(
        "optimizing {} ({} rows, {} dims) with mode {}",
        dataset.id(),
        dataset.n(),
        dataset.p(),
        mode.name()
    );
    let (best, trace) = evolve(&dataset, &mode, &cfg, &grids)?;
    let final_fitness = trace
        .generations
        .last()
        .map_or(f64::NEG_INFINITY, |g| g.best_fitness);
    info!("best pipeline: {} (fitness {:.6})", best.to_canonical_string(), final_fitness);

    let deadline = match cfg.eval_budget {
        Some(b) => Deadline::after(b),
        None => Deadline::none(),
    };
    // Same stream the winner was evaluated with, so the written labels
    // are exactly the partition the reported fitness scored.
    let partition = apply_pipeline_bounded(&best, &dataset, candidate_stream(cfg.seed, &best), deadline)?;

    let mut pipeline_json = serde_json::to_string_pretty(&best)
        .map_err(|e| Error::FormatError(format!("pipeline serialization: {e}")))?;
    pipeline_json.push('\n');
    std::fs::write(&args.out_pipeline, pipeline_json)?;

    let mut labels = String::from("row_index,label\n");
    for (i, &a) in partition.assignments().iter().enumerate() {
        labels.push_str(&format!("{i},{a}\n"));
    }
    std::fs::write(&args.out_labels, labels)?;
    trace.write_csv(&args.out_trace)?;
    info!(
        "wrote {}, {} ({} rows, k = {}), {}",
        args.out_pipeline.display(),
        args.out_labels.display(),
        partition.n(),
        partition.k(),
        args.out_trace.display()
    );

    write_run_manifest(
        &manifest_beside(&args.out_pipeline),
        "optimize",
        threads,
        json!({
            "data": args.data.display().to_string(),
            "model": args.model.as_ref().map(|p| p.display().to_string()),
            "mode": args.mode.flag_name(),
            "pop": args.pop,
            "gens": args.gens,
            "seed": args.seed,
            "out_pipeline": args.out_pipeline.display().to_string(),
            "out_labels": args.out_labels.display().to_string(),
            "out_trace": args.out_trace.display().to_string(),
        }),
    )
}

fn parse_modes(
    text: &str,
    model: Option<&PathBuf>,
    cvi_model: Option<&PathBuf>,
) -> Result<Vec<FitnessMode>> {
    let mut choices = Vec::new();
    for token in text.split(',') {
        let token = token.trim();
        let choice = match token {
            "full" => ModeChoice::Full,
            "cvi" => ModeChoice::Cvi,
            "sil" => ModeChoice::Sil,
            "dbs" => ModeChoice::Dbs,
            other => {
                return Err(Error::ConfigError(format!(
                    "--modes: unknown mode {other:?} (expected full, cvi, sil, dbs)"
                )))
            }
        };
        if choices.contains(&choice) {
            return Err(Error::ConfigError(format!("--modes: {token} listed twice")));
        }
        choices.push(choice);
    }
    if choices.is_empty() {
        return Err(Error::ConfigError("--modes: empty mode list".to_string()));
    }
    // The two surrogate modes read different feature layouts, so each has
    // its own model file; unused model flags are tolerated for scripting.
    if choices.contains(&ModeChoice::Full) && model.is_none() {
        return Err(Error::ConfigError(
            "--modes including full require --model".to_string(),
        ));
    }
    if choices.contains(&ModeChoice::Cvi) && cvi_model.is_none() {
        return Err(Error::ConfigError(
            "--modes including cvi require --cvi-model".to_string(),
        ));
    }
    choices
        .into_iter()
        .map(|choice| {
            Ok(match choice {
                ModeChoice::Sil => FitnessMode::SilOnly,
                ModeChoice::Dbs => FitnessMode::DbsOnly,
                ModeChoice::Full => FitnessMode::Full(SurrogateModel::load(model.unwrap())?),
                ModeChoice::Cvi => FitnessMode::CviOnly(SurrogateModel::load(cvi_model.unwrap())?),
            })
        })
        .collect()
}

fn cmd_evaluate(args: EvaluateArgs, threads: usize) -> Result<()> {
    let modes = parse_modes(&args.modes, args.model.as_ref(), args.cvi_model.as_ref())?;
    let datasets = load_corpus(&args.datasets)?;
    let cfg = EvolutionConfig {
        seed: args.seed,
        ..EvolutionConfig::default()
    };
    info!(
        "ablation: {} datasets x {} modes x {} reps",
        datasets.len(),
        modes.len(),
        args.reps
    );
    let table = run_ablation(&datasets, &modes, args.reps, &cfg, &default_grids())?;
    for failure in &table.failures {
        warn!("run failed: {failure}");
    }
    table.write_csv(&args.out)?;
    info!(
        "wrote {} rows ({} failures) to {}",
        table.rows.len(),
        table.failures.len(),
        args.out.display()
    );
    write_run_manifest(
        &manifest_beside(&args.out),
        "evaluate",
        threads,
        json!({
            "datasets": args.datasets.display().to_string(),
            "model": args.model.as_ref().map(|p| p.display().to_string()),
            "cvi_model": args.cvi_model.as_ref().map(|p| p.display().to_string()),
            "modes": args.modes,
            "reps": args.reps,
            "seed": args.seed,
            "out": args.out.display().to_string(),
        }),
    )
}

fn cmd_stats(args: StatsArgs, threads: usize) -> Result<()> {
    let table = ResultTable::read_csv(&args.results)?;
    let summaries = summarize(&table)?;
    let (methods, scores, dropped) = pivot_ari(&table)?;

    let mut report = String::new();
    report.push_str("per-method means:\n");
    for s in &summaries {
        report.push_str(&format!(
            "  {:<8} ari = {:.4}, sil = {:.4}, dbs = {:.4} ({} rows, {} with missing values)\n",
            s.method, s.mean_ari, s.mean_sil, s.mean_dbs, s.rows, s.rows_skipped
        ));
    }
    if dropped > 0 {
        report.push_str(&format!(
            "{dropped} datasets dropped from the paired test (incomplete method coverage)\n"
        ));
    }
    report.push('\n');
    report.push_str(&stats_report(&methods, &scores, args.alpha)?);
    std::fs::write(&args.out, &report)?;
    info!("wrote report to {}", args.out.display());

    write_run_manifest(
        &manifest_beside(&args.out),
        "stats",
        threads,
        json!({
            "results": args.results.display().to_string(),
            "alpha": args.alpha,
            "out": args.out.display().to_string(),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threads_flag_beats_environment() {
        assert_eq!(resolve_threads(Some(3)).unwrap(), 3);
        assert!(matches!(resolve_threads(Some(0)), Err(Error::ConfigError(_))));
    }

    #[test]
    fn mode_and_model_must_agree() {
        let path = PathBuf::from("model.json");
        assert!(matches!(
            build_mode(ModeChoice::Full, None),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(
            build_mode(ModeChoice::Sil, Some(&path)),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(build_mode(ModeChoice::Dbs, None), Ok(FitnessMode::DbsOnly)));
    }

    #[test]
    fn mode_list_rejects_unknown_and_duplicates() {
        assert!(matches!(
            parse_modes("sil,worst", None, None),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(
            parse_modes("sil,sil", None, None),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(
            parse_modes("full,sil", None, None),
            Err(Error::ConfigError(_))
        ));
        let path = PathBuf::from("model.json");
        assert!(matches!(
            parse_modes("full,cvi", Some(&path), None),
            Err(Error::ConfigError(_))
        ));
        let modes = parse_modes("sil,dbs", None, None).unwrap();
        assert_eq!(modes.len(), 2);
    }

    #[test]
    fn manifest_lands_beside_primary_output() {
        assert_eq!(
            manifest_beside(Path::new("runs/model.json")),
            Path::new("runs/model.json.run.json")
        );
    }
}
