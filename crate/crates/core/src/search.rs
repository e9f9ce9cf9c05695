//! Grid search over training configurations and the embedding-size sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Filter, ModelScorer, RecallValidator, VALIDATION_K};
use crate::model::{init_model, InitSpec, ModelKind};
use crate::train::{
    compatible, fit, LossKind, NoValidation, OptimizerKind, RegularizerKind, Strategy,
    TrainingConfig, Validator,
};

/// Axes of the grid plus the settings shared by every trial.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub strategies: Vec<Strategy>,
    pub losses: Vec<LossKind>,
    pub batch_sizes: Vec<usize>,
    pub optimizers: Vec<OptimizerKind>,
    pub learning_rates: Vec<f64>,
    pub regularizers: Vec<RegularizerKind>,
    pub reg_weights: Vec<f64>,
    pub embedding_size: usize,
    pub num_validation_splits: usize,
    pub valid_fraction: f64,
    /// Template for the fields the axes do not set.
    pub base: TrainingConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            strategies: vec![Strategy::NegSampling, Strategy::KvsAll, Strategy::OneVsAll],
            losses: vec![LossKind::Bce, LossKind::Kl],
            batch_sizes: vec![1024, 2048],
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Adagrad],
            learning_rates: vec![0.0001, 0.001, 0.01, 0.1],
            regularizers: vec![RegularizerKind::N3, RegularizerKind::Lp],
            reg_weights: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            embedding_size: 64,
            num_validation_splits: 3,
            valid_fraction: 0.1,
            base: TrainingConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("strategies", self.strategies.is_empty()),
            ("losses", self.losses.is_empty()),
            ("batch_sizes", self.batch_sizes.is_empty()),
            ("optimizers", self.optimizers.is_empty()),
            ("learning_rates", self.learning_rates.is_empty()),
            ("regularizers", self.regularizers.is_empty()),
            ("reg_weights", self.reg_weights.is_empty()),
        ];
        if let Some((axis, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidArgument(format!("grid axis {axis} is empty")));
        }
        if self.embedding_size == 0 || self.num_validation_splits == 0 {
            return Err(Error::InvalidArgument(
                "embedding_size and num_validation_splits must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Full Cartesian product in axis order, before compatibility pruning.
pub fn grid_product(spec: &GridSpec) -> Vec<TrainingConfig> {
    let mut out = Vec::new();
    for &strategy in &spec.strategies {
        for &loss in &spec.losses {
            for &batch_size in &spec.batch_sizes {
                for &optimizer in &spec.optimizers {
                    for &learning_rate in &spec.learning_rates {
                        for &regularizer in &spec.regularizers {
                            for &reg_weight in &spec.reg_weights {
                                out.push(TrainingConfig {
                                    strategy,
                                    loss,
                                    batch_size,
                                    optimizer,
                                    learning_rate,
                                    regularizer,
                                    reg_weight,
                                    ..spec.base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// A grid point with its stable id.
#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub id: usize,
    pub config: TrainingConfig,
}

/// Compatible, duplicate-free grid points in product order, numbered from 0.
pub fn enumerate_grid(spec: &GridSpec) -> Result<Vec<GridConfig>> {
    spec.validate()?;
    let mut out: Vec<GridConfig> = Vec::new();
    for config in grid_product(spec) {
        if !compatible(config.strategy, config.loss) || out.iter().any(|g| g.config == config) {
            continue;
        }
        out.push(GridConfig {
            id: out.len(),
            config,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(out)
}

/// How per-split validation scores become one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            _ => Err(Error::InvalidArgument(format!(
                "unknown aggregation {s:?}; use mean or max"
            ))),
        }
    }
}

impl Aggregation {
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// One line of the trial table: a configuration fitted on one validation split.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub config_id: usize,
    pub strategy: Strategy,
    pub loss: LossKind,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub reg: RegularizerKind,
    pub reg_weight: f64,
    pub split: usize,
    pub recall20: Option<f64>,
    pub best_epoch: usize,
    pub seconds: f64,
    pub ok: bool,
}

pub const TRIAL_HEADER: &str =
    "config_id\tstrategy\tloss\tbatch\toptimizer\tlr\treg\treg_weight\tsplit\trecall20\tbest_epoch\tseconds\tstatus";

impl TrialRow {
    fn matches(&self, c: &TrainingConfig) -> bool {
        self.strategy == c.strategy
            && self.loss == c.loss
            && self.batch == c.batch_size
            && self.optimizer == c.optimizer
            && self.lr == c.learning_rate
            && self.reg == c.regularizer
            && self.reg_weight == c.reg_weight
    }
}

impl fmt::Display for TrialRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let recall = self
            .recall20
            .map_or_else(|| "NA".to_string(), |r| r.to_string());
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\t{}",
            self.config_id,
            self.strategy,
            self.loss,
            self.batch,
            self.optimizer,
            self.lr,
            self.reg,
            self.reg_weight,
            self.split,
            recall,
            self.best_epoch,
            self.seconds,
            if self.ok { "ok" } else { "failed" }
        )
    }
}

impl FromStr for TrialRow {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 13 {
            return Err(Error::InvalidArgument(format!(
                "expected 13 fields, found {}",
                f.len()
            )));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} {s:?}")))
        };
        let int = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} {s:?}")))
        };
        let ok = match f[12] {
            "ok" => true,
            "failed" => false,
            other => return Err(Error::InvalidArgument(format!("bad status {other:?}"))),
        };
        Ok(TrialRow {
            config_id: int(f[0], "config_id")?,
            strategy: f[1].parse()?,
            loss: f[2].parse()?,
            batch: int(f[3], "batch")?,
            optimizer: f[4].parse()?,
            lr: num(f[5], "lr")?,
            reg: f[6].parse()?,
            reg_weight: num(f[7], "reg_weight")?,
            split: int(f[8], "split")?,
            recall20: if f[9] == "NA" {
                None
            } else {
                Some(num(f[9], "recall20")?)
            },
            best_epoch: int(f[10], "best_epoch")?,
            seconds: num(f[11], "seconds")?,
            ok,
        })
    }
}

/// Reads a trial table. A final line without a newline is an interrupted
/// write and is ignored; the header is optional.
pub fn read_trial_table(text: &str) -> Result<Vec<TrialRow>> {
    let complete = match text.rfind('\n') {
        Some(pos) => &text[..=pos],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && *l != TRIAL_HEADER)
        .map(|(n, l)| {
            l.parse().map_err(|e: Error| Error::Parse {
                path: "trial table".into(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Aggregated outcome of one configuration over all its splits.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub config_id: usize,
    pub config: TrainingConfig,
    /// Validation Recall@20 per split; `None` where the split failed.
    pub split_recalls: Vec<Option<f64>>,
    pub best_epochs: Vec<usize>,
    /// `None` if any split failed.
    pub aggregate: Option<f64>,
    pub seconds: f64,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.aggregate.is_none()
    }
}

/// Groups complete trials (every split present) out of `rows`.
pub fn trials_from_rows(
    rows: &[TrialRow],
    grid: &[GridConfig],
    splits: usize,
    aggregation: Aggregation,
) -> Vec<TrialResult> {
    let mut by_id: BTreeMap<usize, BTreeMap<usize, &TrialRow>> = BTreeMap::new();
    for r in rows {
        by_id.entry(r.config_id).or_default().insert(r.split, r);
    }
    let mut out = Vec::new();
    for g in grid {
        let Some(per_split) = by_id.get(&g.id) else {
            continue;
        };
        if (0..splits).any(|s| !per_split.contains_key(&s)) {
            continue;
        }
        let rows: Vec<&TrialRow> = (0..splits).map(|s| per_split[&s]).collect();
        let split_recalls: Vec<Option<f64>> =
            rows.iter().map(|r| r.recall20.filter(|_| r.ok)).collect();
        let aggregate = split_recalls
            .iter()
            .copied()
            .collect::<Option<Vec<f64>>>()
            .map(|v| aggregation.apply(&v));
        out.push(TrialResult {
            config_id: g.id,
            config: g.config.clone(),
            split_recalls,
            best_epochs: rows.iter().map(|r| r.best_epoch).collect(),
            aggregate,
            seconds: rows.iter().map(|r| r.seconds).sum(),
        });
    }
    out
}

/// Highest aggregate; ties go to the lower wall time, then the lower id.
pub fn select_best(trials: &[TrialResult]) -> Option<&TrialResult> {
    trials
        .iter()
        .filter(|t| t.aggregate.is_some())
        .min_by(|a, b| {
            let (x, y) = (
                a.aggregate.unwrap_or(f64::NAN),
                b.aggregate.unwrap_or(f64::NAN),
            );
            y.total_cmp(&x)
                .then(a.seconds.total_cmp(&b.seconds))
                .then(a.config_id.cmp(&b.config_id))
        })
}

/// Stop conditions for a grid run. Counted in whole configurations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Budget {
    pub max_trials: Option<usize>,
    pub max_seconds: Option<f64>,
}

impl Budget {
    fn validate(&self) -> Result<()> {
        if self.max_trials == Some(0) || self.max_seconds.is_some_and(|s| s.is_nan() || s <= 0.0) {
            return Err(Error::InvalidArgument("budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub trials: Vec<TrialResult>,
    pub best: Option<TrialResult>,
    /// Rows computed in this run (resumed rows excluded).
    pub new_rows: usize,
}

/// Seed of the `split`-th validation holdout.
pub fn split_seed(base: u64, split: usize) -> u64 {
    base.wrapping_add(split as u64)
}

/// Fits `config` on one validation split; returns `(recall@20, best epoch)`.
pub fn run_split(
    kind: ModelKind,
    dataset: &InteractionDataset,
    config: &TrainingConfig,
    dim: usize,
    valid_fraction: f64,
    split: usize,
) -> Result<(f64, usize)> {
    let ds = dataset.resplit(valid_fraction, split_seed(config.seed, split))?;
    let model = init_model(
        kind,
        dim,
        ds.num_users + ds.num_items,
        1,
        InitSpec::default_for(dim, config.seed),
    )?;
    let outcome = fit(model, &ds, config, &RecallValidator::new(&ds))?;
    let recall = outcome.best_metric.ok_or(Error::NoValidationTargets)?;
    Ok((recall, outcome.best_epoch))
}

/// Runs every grid point on every split, appending rows to `table`. Rows
/// already in the table are reused, so an interrupted run resumes where it
/// stopped. A failing split is recorded and the search continues.
#[allow(clippy::too_many_arguments)]
pub fn run_grid(
    kind: ModelKind,
    dataset: &InteractionDataset,
    spec: &GridSpec,
    grid: &[GridConfig],
    budget: Budget,
    aggregation: Aggregation,
    table: &Path,
    mut log: impl FnMut(&str),
) -> Result<GridOutcome> {
    spec.validate()?;
    budget.validate()?;
    let splits = spec.num_validation_splits;

    let existing = match fs::read_to_string(table) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(table, e)),
    };
    let mut rows = read_trial_table(&existing)?;
    for r in &rows {
        let cfg = grid.iter().find(|g| g.id == r.config_id);
        if !cfg.is_some_and(|g| r.matches(&g.config)) {
            return Err(Error::InvalidArgument(format!(
                "{}: row for config {} does not belong to this grid",
                table.display(),
                r.config_id
            )));
        }
    }
    // Drop an interrupted trailing line and make sure a header is present.
    let clean = existing.rfind('\n').map_or("", |p| &existing[..=p]);
    if clean.len() != existing.len() || clean.is_empty() {
        let mut text = String::new();
        if !clean.starts_with(TRIAL_HEADER) {
            text.push_str(TRIAL_HEADER);
            text.push('\n');
        }
        text.push_str(clean);
        fs::write(table, text).map_err(|e| Error::io(table, e))?;
    }
    let mut file = OpenOptions::new()
        .append(true)
        .open(table)
        .map_err(|e| Error::io(table, e))?;

    let start = Instant::now();
    let mut new_rows = 0;
    for g in grid {
        let done = |rows: &[TrialRow]| trials_from_rows(rows, grid, splits, aggregation).len();
        if budget.max_trials.is_some_and(|m| done(&rows) >= m) {
            break;
        }
        if budget
            .max_seconds
            .is_some_and(|s| start.elapsed().as_secs_f64() >= s)
        {
            break;
        }
        for split in 0..splits {
            if rows.iter().any(|r| r.config_id == g.id && r.split == split) {
                continue;
            }
            let t0 = Instant::now();
            let result = run_split(
                kind,
                dataset,
                &g.config,
                spec.embedding_size,
                spec.valid_fraction,
                split,
            );
            let seconds = t0.elapsed().as_secs_f64();
            if let Err(e) = &result {
                log(&format!("config {} split {split} failed: {e}", g.id));
            }
            let c = &g.config;
            let row = TrialRow {
                config_id: g.id,
                strategy: c.strategy,
                loss: c.loss,
                batch: c.batch_size,
                optimizer: c.optimizer,
                lr: c.learning_rate,
                reg: c.regularizer,
                reg_weight: c.reg_weight,
                split,
                recall20: result.as_ref().ok().map(|r| r.0),
                best_epoch: result.as_ref().map_or(0, |r| r.1),
                seconds,
                ok: result.is_ok(),
            };
            let line = format!("{row}\n");
            file.write_all(line.as_bytes())
                .map_err(|e| Error::io(table, e))?;
            file.flush().map_err(|e| Error::io(table, e))?;
            // Keep exactly what was persisted so selection is a function of the table.
            rows.push(line.trim_end().parse()?);
            new_rows += 1;
        }
    }

    let mut trials = trials_from_rows(&rows, grid, splits, aggregation);
    if let Some(m) = budget.max_trials {
        trials.truncate(m);
    }
    let best = select_best(&trials).cloned();
    Ok(GridOutcome {
        trials,
        best,
        new_rows,
    })
}

/// Test Recall@20 at one embedding size, or why it failed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub size: usize,
    pub result: std::result::Result<f64, String>,
}

pub const SWEEP_HEADER: &str = "size\trecall@20\tstatus";

impl SweepPoint {
    pub fn tsv_row(&self) -> String {
        match &self.result {
            Ok(r) => format!("{}\t{r:.6}\tok", self.size),
            Err(_) => format!("{}\tNA\tfailed", self.size),
        }
    }
}

/// Fit at `dim` then score the test split with train and validation filtered.
pub fn fit_and_test(
    kind: ModelKind,
    dataset: &InteractionDataset,
    config: &TrainingConfig,
    dim: usize,
    k: usize,
) -> Result<f64> {
    let model = init_model(
        kind,
        dim,
        dataset.num_users + dataset.num_items,
        1,
        InitSpec::default_for(dim, config.seed),
    )?;
    let validator = RecallValidator::new(dataset);
    let outcome = if validator.has_targets() {
        fit(model, dataset, config, &validator)?
    } else {
        let cfg = TrainingConfig {
            patience: None,
            ..config.clone()
        };
        fit(model, dataset, &cfg, &NoValidation)?
    };
    let scorer = ModelScorer::new(&outcome.model, dataset.num_users, dataset.num_items)?;
    Ok(evaluate(&scorer, dataset, k, Filter::TrainValid)?.recall_at_k)
}

/// Retrains `config` at each size with everything else frozen.
pub fn embedding_sweep(
    kind: ModelKind,
    dataset: &InteractionDataset,
    config: &TrainingConfig,
    sizes: &[usize],
) -> Result<Vec<SweepPoint>> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no embedding sizes given".into()));
    }
    Ok(sizes
        .iter()
        .map(|&size| SweepPoint {
            size,
            result: fit_and_test(kind, dataset, config, size, VALIDATION_K)
                .map_err(|e| e.to_string()),
        })
        .collect())
}

/// Embedding sizes swept when none are given.
pub const DEFAULT_SWEEP_SIZES: [usize; 4] = [128, 256, 512, 1024];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_dataset;

    fn single(spec: &GridSpec) -> GridSpec {
        GridSpec {
            strategies: vec![spec.strategies[2]],
            losses: vec![LossKind::Kl],
            batch_sizes: vec![64],
            optimizers: vec![OptimizerKind::Adagrad],
            learning_rates: vec![0.1],
            regularizers: vec![RegularizerKind::N3],
            reg_weights: vec![1e-3],
            ..spec.clone()
        }
    }

    #[test]
    fn default_grid_sizes() {
        let spec = GridSpec::default();
        assert_eq!(grid_product(&spec).len(), 1152);
        let grid = enumerate_grid(&spec).unwrap();
        assert_eq!(grid.len(), 576);
        for (n, g) in grid.iter().enumerate() {
            assert_eq!(g.id, n);
            assert!(compatible(g.config.strategy, g.config.loss));
        }
        assert_eq!(enumerate_grid(&spec).unwrap(), grid);
    }

    #[test]
    fn one_value_per_axis_gives_one_config() {
        assert_eq!(
            enumerate_grid(&single(&GridSpec::default())).unwrap().len(),
            1
        );
    }

    #[test]
    fn incompatible_only_grid_is_empty() {
        let spec = GridSpec {
            strategies: vec![Strategy::OneVsAll],
            losses: vec![LossKind::Bce],
            ..GridSpec::default()
        };
        assert!(matches!(enumerate_grid(&spec), Err(Error::EmptyGrid)));
    }

    #[test]
    fn duplicated_axis_values_collapse() {
        let spec = GridSpec {
            learning_rates: vec![0.1, 0.1],
            ..single(&GridSpec::default())
        };
        assert_eq!(grid_product(&spec).len(), 2);
        assert_eq!(enumerate_grid(&spec).unwrap().len(), 1);
    }

    #[test]
    fn trial_rows_round_trip() {
        let row = TrialRow {
            config_id: 3,
            strategy: Strategy::KvsAll,
            loss: LossKind::Bce,
            batch: 1024,
            optimizer: OptimizerKind::Adam,
            lr: 0.001,
            reg: RegularizerKind::Lp,
            reg_weight: 1e-5,
            split: 2,
            recall20: Some(0.123_456_789_012_345_6),
            best_epoch: 15,
            seconds: 1.5,
            ok: true,
        };
        assert_eq!(row.to_string().parse::<TrialRow>().unwrap(), row);
    }

    #[test]
    fn partial_last_line_is_ignored() {
        let text = format!("{TRIAL_HEADER}\n0\t1vsall\tkl\t64\tadagrad\t0.1\tn3\t0.001\t0\t0.5\t5\t0.100\tok\n0\t1vs");
        assert_eq!(read_trial_table(&text).unwrap().len(), 1);
    }

    fn row(id: usize, split: usize, recall: f64, seconds: f64) -> TrialRow {
        TrialRow {
            config_id: id,
            strategy: Strategy::OneVsAll,
            loss: LossKind::Kl,
            batch: 64,
            optimizer: OptimizerKind::Adagrad,
            lr: 0.1,
            reg: RegularizerKind::N3,
            reg_weight: 1e-3,
            split,
            recall20: Some(recall),
            best_epoch: 1,
            seconds,
            ok: true,
        }
    }

    #[test]
    fn selection_prefers_score_then_time_then_id() {
        let cfg = TrainingConfig::default();
        let grid: Vec<GridConfig> = (0..3)
            .map(|id| GridConfig {
                id,
                config: cfg.clone(),
            })
            .collect();
        let rows = vec![
            row(0, 0, 0.5, 2.0),
            row(1, 0, 0.5, 1.0),
            row(2, 0, 0.5, 1.0),
        ];
        let trials = trials_from_rows(&rows, &grid, 1, Aggregation::Mean);
        assert_eq!(select_best(&trials).unwrap().config_id, 1);
        let rows = vec![
            row(0, 0, 0.2, 1.0),
            row(0, 1, 0.8, 1.0),
            row(1, 0, 0.6, 1.0),
            row(1, 1, 0.6, 1.0),
        ];
        let mean = trials_from_rows(&rows, &grid, 2, Aggregation::Mean);
        assert_eq!(select_best(&mean).unwrap().config_id, 1);
        let max = trials_from_rows(&rows, &grid, 2, Aggregation::Max);
        assert_eq!(select_best(&max).unwrap().config_id, 0);
    }

    fn toy() -> InteractionDataset {
        let mut pairs = Vec::new();
        for u in 0..8u64 {
            for i in 0..6u64 {
                if (u + i) % 2 == 0 {
                    pairs.push((u, i));
                }
            }
        }
        build_dataset(&pairs, &[], 0.0, 0).unwrap()
    }

    fn mini_spec() -> GridSpec {
        GridSpec {
            strategies: vec![Strategy::OneVsAll],
            losses: vec![LossKind::Kl],
            batch_sizes: vec![16],
            optimizers: vec![OptimizerKind::Adagrad, OptimizerKind::Adam],
            learning_rates: vec![0.01, 0.1],
            regularizers: vec![RegularizerKind::N3],
            reg_weights: vec![1e-3],
            embedding_size: 8,
            num_validation_splits: 2,
            valid_fraction: 0.34,
            base: TrainingConfig {
                epochs: 4,
                eval_every: 2,
                patience: Some(2),
                ..TrainingConfig::default()
            },
        }
    }

    #[test]
    fn budget_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("trials.tsv");
        let spec = mini_spec();
        let grid = enumerate_grid(&spec).unwrap();
        let kind = ModelKind::DistMult;
        let one = Budget {
            max_trials: Some(1),
            max_seconds: None,
        };
        let out = run_grid(
            kind,
            &toy(),
            &spec,
            &grid,
            one,
            Aggregation::Mean,
            &table,
            |_| {},
        )
        .unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.new_rows, 2);

        let full = run_grid(
            kind,
            &toy(),
            &spec,
            &grid,
            Budget::default(),
            Aggregation::Mean,
            &table,
            |_| {},
        )
        .unwrap();
        assert_eq!(full.trials.len(), 4);
        assert_eq!(full.new_rows, 6);

        let rows = read_trial_table(&fs::read_to_string(&table).unwrap()).unwrap();
        let offline = trials_from_rows(&rows, &grid, 2, Aggregation::Mean);
        assert_eq!(select_best(&offline), full.best.as_ref());
        let brute = offline
            .iter()
            .max_by(|a, b| {
                a.aggregate
                    .partial_cmp(&b.aggregate)
                    .unwrap()
                    .then(b.seconds.partial_cmp(&a.seconds).unwrap())
                    .then(b.config_id.cmp(&a.config_id))
            })
            .unwrap();
        assert_eq!(Some(brute), full.best.as_ref());

        let again = run_grid(
            kind,
            &toy(),
            &spec,
            &grid,
            Budget::default(),
            Aggregation::Mean,
            &table,
            |_| {},
        )
        .unwrap();
        assert_eq!(again.new_rows, 0);
        assert_eq!(again.trials, full.trials);
    }

    #[test]
    fn identical_configs_give_identical_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let spec = mini_spec();
        let base = enumerate_grid(&spec).unwrap()[0].config.clone();
        let grid = vec![
            GridConfig {
                id: 0,
                config: base.clone(),
            },
            GridConfig {
                id: 1,
                config: base,
            },
        ];
        let table = dir.path().join("t.tsv");
        let out = run_grid(
            ModelKind::MF,
            &toy(),
            &spec,
            &grid,
            Budget::default(),
            Aggregation::Mean,
            &table,
            |_| {},
        )
        .unwrap();
        assert_eq!(out.trials[0].split_recalls, out.trials[1].split_recalls);
    }

    #[test]
    fn foreign_table_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("t.tsv");
        let mut r = row(0, 0, 0.5, 1.0);
        r.lr = 0.5;
        fs::write(&table, format!("{TRIAL_HEADER}\n{r}\n")).unwrap();
        let spec = mini_spec();
        let grid = enumerate_grid(&spec).unwrap();
        assert!(run_grid(
            ModelKind::MF,
            &toy(),
            &spec,
            &grid,
            Budget::default(),
            Aggregation::Mean,
            &table,
            |_| {}
        )
        .is_err());
    }

    #[test]
    fn singleton_sweep_equals_plain_fit() {
        let train: Vec<(u64, u64)> = (0..8u64)
            .flat_map(|u| {
                (0..6u64)
                    .filter(move |i| (u + i) % 2 == 0)
                    .map(move |i| (u, i))
            })
            .collect();
        let test: Vec<(u64, u64)> = (0..8u64).map(|u| (u, (u + 1) % 6)).collect();
        let ds = build_dataset(&train, &test, 0.34, 1).unwrap();
        let cfg = TrainingConfig {
            epochs: 3,
            eval_every: 1,
            patience: Some(1),
            batch_size: 16,
            ..TrainingConfig::default()
        };
        let sweep = embedding_sweep(ModelKind::MF, &ds, &cfg, &[8]).unwrap();
        assert_eq!(sweep.len(), 1);
        let plain = fit_and_test(ModelKind::MF, &ds, &cfg, 8, 20).unwrap();
        assert_eq!(sweep[0].result, Ok(plain));
    }
}
