//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{
    build_knn, build_popularity, KnnConfig, NeighborMode, RandomScorer, DEFAULT_NEIGHBORS,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, Manifest};
use crate::dataset::{
    build_dataset, dataset_stats, load_split_dir, FileFormat, InteractionDataset,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, rank_topk, Filter, ModelScorer, RankingReport, RecallValidator, Scorer,
};
use crate::model::init_model;
use crate::runconfig::{RunConfig, DEFAULT_VALID_FRACTION};
use crate::search::{
    embedding_sweep, enumerate_grid, run_grid, Aggregation, Budget, GridSpec, DEFAULT_SWEEP_SIZES,
    SWEEP_HEADER,
};
use crate::train::{fit, LossKind, OptimizerKind, RegularizerKind, Strategy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "kgrec",
    version,
    about = "Knowledge-graph embeddings for top-k item recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a split directory, hold out validation positives and cache the result as JSON.
    Prepare(PrepareArgs),
    /// Fit a model from a run configuration and write a checkpoint.
    Train(TrainArgs),
    /// Write a ranking report for a checkpoint or a baseline.
    Evaluate(EvaluateArgs),
    /// Print top-k items for the given users.
    Recommend(RecommendArgs),
    /// Run the hyper-parameter grid.
    Grid(GridArgs),
    /// Retrain at several embedding sizes and report test Recall@20.
    Sweep(SweepArgs),
    /// Print corpus statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Directory with train.txt and optionally test.txt.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "adjacency")]
    format: FileFormat,
    #[arg(long, default_value_t = DEFAULT_VALID_FRACTION)]
    valid_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides dataset.path.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Per-epoch trace TSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineKind {
    Mostpop,
    Random,
    Userknn,
    Itemknn,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["checkpoint", "baseline"])))]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<BaselineKind>,
    /// Neighborhood size for the kNN baselines; 0 keeps all neighbors.
    #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
    neighbors: usize,
    /// Dataset directory or prepared JSON; defaults to the checkpoint's own data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<FileFormat>,
    /// Run configuration supplying dataset keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// train or train+valid.
    #[arg(long)]
    filter: Option<Filter>,
    /// Seed of the Random baseline and of the validation split when building from raw files.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    per_user: Option<PathBuf>,
    /// Model label in the report; defaults to the model kind.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct RecommendArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw user ids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    users: Vec<u64>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    /// Append-only trial table; an existing table is resumed.
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    max_trials: Option<usize>,
    #[arg(long)]
    max_seconds: Option<f64>,
    #[arg(long, default_value = "mean")]
    aggregation: Aggregation,
    #[arg(long, default_value_t = 3)]
    splits: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    #[arg(long, value_delimiter = ',')]
    losses: Option<Vec<LossKind>>,
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    optimizers: Option<Vec<OptimizerKind>>,
    #[arg(long, value_delimiter = ',')]
    learning_rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    regularizers: Option<Vec<RegularizerKind>>,
    #[arg(long, value_delimiter = ',')]
    reg_weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_SIZES)]
    sizes: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "adjacency")]
    format: FileFormat,
    /// Row label; defaults to the directory name.
    #[arg(long)]
    name: Option<String>,
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn cli_dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match run(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn run(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a, out, err),
        Command::Train(a) => train(a, err),
        Command::Evaluate(a) => evaluate_cmd(a, out, err),
        Command::Recommend(a) => recommend(a, out, err),
        Command::Grid(a) => grid(a, out, err),
        Command::Sweep(a) => sweep(a, out, err),
        Command::Stats(a) => stats(a, out, err),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn emit(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => write_out(out, text),
    }
}

fn warn_all(dataset: &InteractionDataset, err: &mut dyn Write) {
    for w in &dataset.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
}

/// A prepared JSON file is used as is; a directory is loaded and split.
pub fn load_dataset(
    path: &Path,
    format: FileFormat,
    valid_fraction: f64,
    seed: u64,
) -> Result<InteractionDataset> {
    let ds = if path.is_file() {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ds: InteractionDataset = serde_json::from_slice(&text)?;
        ds.validate()?;
        ds
    } else {
        let (train, test) = load_split_dir(path, format)?;
        build_dataset(&train, &test, valid_fraction, seed)?
    };
    Ok(ds)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Resolves a path from a config file against the config's directory.
fn relative_to(config: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match config.parent() {
        Some(dir) => dir.join(path),
        None => path.to_path_buf(),
    }
}

fn prepare(a: PrepareArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let (train, test) = load_split_dir(&a.data, a.format)?;
    let ds = build_dataset(&train, &test, a.valid_fraction, a.seed)?;
    warn_all(&ds, err);
    let mut json = serde_json::to_vec(&ds)?;
    json.push(b'\n');
    write_atomic(&a.out, &json)?;
    write_out(
        out,
        &format!(
            "{} users, {} items, {} train, {} valid, {} test\n",
            ds.num_users,
            ds.num_items,
            ds.num_train(),
            ds.num_valid(),
            ds.num_test()
        ),
    )
}

struct ConfiguredData {
    rc: RunConfig,
    path: PathBuf,
    dataset: InteractionDataset,
}

fn configured_data(
    config: &Path,
    data: Option<PathBuf>,
    err: &mut dyn Write,
) -> Result<ConfiguredData> {
    let rc = RunConfig::load(config)?;
    let path = match data {
        Some(p) => p,
        None => {
            rc.require(&["dataset.path"])?;
            relative_to(config, rc.dataset_path.as_deref().expect("required"))
        }
    };
    let dataset = load_dataset(&path, rc.format(), rc.valid_fraction(), rc.seed())?;
    warn_all(&dataset, err);
    Ok(ConfiguredData { rc, path, dataset })
}

fn train(a: TrainArgs, err: &mut dyn Write) -> Result<()> {
    let ConfiguredData { rc, path, dataset } = configured_data(&a.config, a.data, err)?;
    rc.require(&["model.kind", "model.dim"])?;
    let kind = rc.model_kind.expect("required");
    let dim = rc.model_dim.expect("required");
    let cfg = rc.training_config();
    cfg.validate()?;
    let model = init_model(
        kind,
        dim,
        dataset.num_users + dataset.num_items,
        1,
        rc.init_spec(dim),
    )?;
    let outcome = fit(model, &dataset, &cfg, &RecallValidator::new(&dataset))?;
    if let Some(trace) = &a.trace {
        write_atomic(trace, outcome.trace_tsv().as_bytes())?;
    }
    let manifest = Manifest {
        user_ids: dataset.user_ids.clone(),
        item_ids: dataset.item_ids.clone(),
        dataset: Some(
            rc.dataset_name
                .clone()
                .unwrap_or_else(|| dataset_name(&path)),
        ),
        data_path: Some(path),
        data_format: Some(rc.format()),
        valid_fraction: Some(rc.valid_fraction()),
        split_seed: Some(rc.seed()),
        training: Some(cfg),
        validation_recall: outcome.best_metric,
        best_epoch: Some(outcome.best_epoch),
    };
    save_checkpoint(&outcome.model, &manifest, &a.out)?;
    let recall = outcome
        .best_metric
        .map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
    let _ = writeln!(
        err,
        "saved {} (best epoch {}, validation recall@20 {recall})",
        a.out.display(),
        outcome.best_epoch
    );
    Ok(())
}

fn dataset_for_checkpoint(
    manifest: &Manifest,
    data: Option<PathBuf>,
    format: Option<FileFormat>,
) -> Result<(InteractionDataset, String)> {
    let path = data.or_else(|| manifest.data_path.clone()).ok_or_else(|| {
        Error::InvalidArgument(
            "no --data given and the checkpoint does not record its dataset".into(),
        )
    })?;
    let ds = load_dataset(
        &path,
        format
            .or(manifest.data_format)
            .unwrap_or(FileFormat::Adjacency),
        manifest.valid_fraction.unwrap_or(DEFAULT_VALID_FRACTION),
        manifest.split_seed.unwrap_or(0),
    )?;
    if ds.user_ids != manifest.user_ids || ds.item_ids != manifest.item_ids {
        return Err(Error::InvalidArgument(format!(
            "{} does not match the users and items the checkpoint was trained on",
            path.display()
        )));
    }
    let name = manifest
        .dataset
        .clone()
        .unwrap_or_else(|| dataset_name(&path));
    Ok((ds, name))
}

fn evaluate_cmd(a: EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let rc = a.config.as_deref().map(RunConfig::load).transpose()?;
    let k = a.k.or(rc.as_ref().and_then(|r| r.eval_k)).unwrap_or(20);
    let filter = a
        .filter
        .or(rc.as_ref().and_then(|r| r.eval_filter))
        .unwrap_or(Filter::TrainValid);
    let seed = a.seed.or(rc.as_ref().and_then(|r| r.seed)).unwrap_or(0);
    let data = a.data.clone().or_else(|| {
        let (rc, cfg) = (rc.as_ref()?, a.config.as_deref()?);
        rc.dataset_path.as_deref().map(|p| relative_to(cfg, p))
    });
    let format = a.format.or(rc.as_ref().and_then(|r| r.dataset_format));

    let report: RankingReport;
    let (dataset, ds_name, label) = if let Some(ckpt) = &a.checkpoint {
        let (model, manifest) = load_checkpoint(ckpt)?;
        let (ds, name) = dataset_for_checkpoint(&manifest, data, format)?;
        let scorer = ModelScorer::new(&model, ds.num_users, ds.num_items)?;
        report = evaluate(&scorer, &ds, k, filter)?;
        (ds, name, model.kind().to_string())
    } else {
        let baseline = a.baseline.expect("clap group requires one source");
        let path =
            data.ok_or_else(|| Error::InvalidArgument("baselines need --data or --config".into()))?;
        let valid_fraction = rc
            .as_ref()
            .map_or(DEFAULT_VALID_FRACTION, |r| r.valid_fraction());
        let ds = load_dataset(
            &path,
            format.unwrap_or(FileFormat::Adjacency),
            valid_fraction,
            seed,
        )?;
        warn_all(&ds, err);
        let scorer: Box<dyn Scorer> = match baseline {
            BaselineKind::Mostpop => Box::new(build_popularity(&ds)?),
            BaselineKind::Random => Box::new(RandomScorer {
                seed,
                num_items: ds.num_items,
            }),
            BaselineKind::Userknn | BaselineKind::Itemknn => {
                let mode = if matches!(baseline, BaselineKind::Userknn) {
                    NeighborMode::User
                } else {
                    NeighborMode::Item
                };
                let neighbors = (a.neighbors > 0).then_some(a.neighbors);
                Box::new(build_knn(&ds, &KnnConfig::new(mode, neighbors))?)
            }
        };
        report = evaluate(scorer.as_ref(), &ds, k, filter)?;
        let name = rc
            .as_ref()
            .and_then(|r| r.dataset_name.clone())
            .unwrap_or_else(|| dataset_name(&path));
        let label = format!("{baseline:?}").to_ascii_lowercase();
        (ds, name, label)
    };
    let label = a.name.unwrap_or(label);
    let text = format!(
        "{}\n{}\n",
        RankingReport::TSV_HEADER,
        report.tsv_row(&label, &ds_name)
    );
    emit(a.report.as_deref(), &text, out)?;
    if let Some(p) = &a.per_user {
        write_atomic(p, report.per_user_tsv(&dataset).as_bytes())?;
    }
    Ok(())
}

fn recommend(a: RecommendArgs, out: &mut dyn Write, _err: &mut dyn Write) -> Result<()> {
    let (model, manifest) = load_checkpoint(&a.checkpoint)?;
    let (ds, _) = dataset_for_checkpoint(&manifest, a.data, None)?;
    let scorer = ModelScorer::new(&model, ds.num_users, ds.num_items)?;
    let mut text = String::new();
    for raw in a.users {
        let u = ds
            .user_ids
            .iter()
            .position(|&id| id == raw)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown user {raw}")))?;
        let top = rank_topk(&scorer, &ds, u, a.k, Filter::TrainValid)?;
        let items: Vec<String> = top.iter().map(|&i| ds.item_ids[i].to_string()).collect();
        text.push_str(&format!("{raw}\t{}\n", items.join(" ")));
    }
    write_out(out, &text)
}

fn grid(a: GridArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let ConfiguredData { rc, dataset, .. } = configured_data(&a.config, None, err)?;
    rc.require(&["model.kind"])?;
    let d = GridSpec::default();
    let spec = GridSpec {
        strategies: a.strategies.unwrap_or(d.strategies),
        losses: a.losses.unwrap_or(d.losses),
        batch_sizes: a.batch_sizes.unwrap_or(d.batch_sizes),
        optimizers: a.optimizers.unwrap_or(d.optimizers),
        learning_rates: a.learning_rates.unwrap_or(d.learning_rates),
        regularizers: a.regularizers.unwrap_or(d.regularizers),
        reg_weights: a.reg_weights.unwrap_or(d.reg_weights),
        embedding_size: a.dim,
        num_validation_splits: a.splits,
        valid_fraction: rc.valid_fraction(),
        base: rc.training_config(),
    };
    let grid = enumerate_grid(&spec)?;
    let budget = Budget {
        max_trials: a.max_trials,
        max_seconds: a.max_seconds,
    };
    let kind = rc.model_kind.expect("required");
    let outcome = run_grid(
        kind,
        &dataset,
        &spec,
        &grid,
        budget,
        a.aggregation,
        &a.table,
        |msg| {
            let _ = writeln!(err, "warning: {msg}");
        },
    )?;
    let mut text = String::from(
        "config_id\tstrategy\tloss\tbatch\toptimizer\tlr\treg\treg_weight\taggregate\tseconds\n",
    );
    if let Some(b) = &outcome.best {
        let c = &b.config;
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.3}\n",
            b.config_id,
            c.strategy,
            c.loss,
            c.batch_size,
            c.optimizer,
            c.learning_rate,
            c.regularizer,
            c.reg_weight,
            b.aggregate.unwrap_or(f64::NAN),
            b.seconds
        ));
    } else {
        let _ = writeln!(err, "warning: no trial completed successfully");
    }
    write_out(out, &text)
}

fn sweep(a: SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let ConfiguredData { rc, dataset, .. } = configured_data(&a.config, None, err)?;
    rc.require(&["model.kind"])?;
    let cfg = rc.training_config();
    let points = embedding_sweep(rc.model_kind.expect("required"), &dataset, &cfg, &a.sizes)?;
    let mut text = format!("{SWEEP_HEADER}\n");
    for p in &points {
        if let Err(e) = &p.result {
            let _ = writeln!(err, "warning: size {} failed: {e}", p.size);
        }
        text.push_str(&p.tsv_row());
        text.push('\n');
    }
    emit(a.out.as_deref(), &text, out)
}

fn stats(a: StatsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let (train, test) = load_split_dir(&a.data, a.format)?;
    let ds = build_dataset(&train, &test, 0.0, 0)?;
    warn_all(&ds, err);
    let name = a.name.unwrap_or_else(|| dataset_name(&a.data));
    write_out(out, &format!("{}\n", dataset_stats(&ds).tsv_row(&name)))
}
