//! Flat `key = value` run configuration files.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::FileFormat;
use crate::error::{Error, Result};
use crate::eval::Filter;
use crate::model::{InitScheme, InitSpec, ModelKind};
use crate::train::{LossKind, OptimizerKind, RegularizerKind, Strategy, TrainingConfig};

/// Every recognised key. Anything else is rejected.
pub const KEYS: &[&str] = &[
    "dataset.path",
    "dataset.format",
    "dataset.name",
    "dataset.valid_fraction",
    "model.kind",
    "model.dim",
    "model.init",
    "model.init_scale",
    "train.strategy",
    "train.loss",
    "train.optimizer",
    "train.lr",
    "train.batch",
    "train.reg",
    "train.reg_weight",
    "train.lp_p",
    "train.margin",
    "train.negatives",
    "train.cc_weight",
    "train.cc_margin",
    "train.ph_weight",
    "train.epochs",
    "train.patience",
    "train.eval_every",
    "train.untyped",
    "eval.k",
    "eval.filter",
    "seed",
];

/// Validation fraction used when the file does not set one.
pub const DEFAULT_VALID_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub dataset_path: Option<PathBuf>,
    pub dataset_format: Option<FileFormat>,
    pub dataset_name: Option<String>,
    pub valid_fraction: Option<f64>,
    pub model_kind: Option<ModelKind>,
    pub model_dim: Option<usize>,
    pub init_scheme: Option<InitScheme>,
    pub init_scale: Option<f64>,
    pub strategy: Option<Strategy>,
    pub loss: Option<LossKind>,
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub regularizer: Option<RegularizerKind>,
    pub reg_weight: Option<f64>,
    pub lp_p: Option<f64>,
    pub margin: Option<f64>,
    pub negatives: Option<usize>,
    pub cc_weight: Option<f64>,
    pub cc_margin: Option<f64>,
    pub ph_weight: Option<f64>,
    pub epochs: Option<usize>,
    /// `Some(None)` is an explicit `none`.
    pub patience: Option<Option<usize>>,
    pub eval_every: Option<usize>,
    pub untyped: Option<bool>,
    pub eval_k: Option<usize>,
    pub eval_filter: Option<Filter>,
    pub seed: Option<u64>,
}

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn parse_init(value: &str) -> std::result::Result<InitScheme, String> {
    match value {
        "uniform" => Ok(InitScheme::Uniform),
        "normal" => Ok(InitScheme::Normal),
        _ => Err("expected uniform or normal".into()),
    }
}

fn parse_patience(value: &str) -> std::result::Result<Option<usize>, String> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_value(value).map(Some)
    }
}

impl RunConfig {
    /// Parses the whole file; the first malformed line aborts with its number.
    pub fn parse(text: &str, path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message,
            };
            let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let known = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| err(format!("unknown key {key:?}")))?;
            if seen.contains(known) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            seen.push(known);
            if value.is_empty() {
                return Err(err(format!("empty value for {key}")));
            }
            cfg.set(key, value)
                .map_err(|m| err(format!("{key}: {m}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, path)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "dataset.path" => self.dataset_path = Some(PathBuf::from(v)),
            "dataset.format" => self.dataset_format = Some(parse_value(v)?),
            "dataset.name" => self.dataset_name = Some(v.to_string()),
            "dataset.valid_fraction" => self.valid_fraction = Some(parse_value(v)?),
            "model.kind" => self.model_kind = Some(parse_value(v)?),
            "model.dim" => self.model_dim = Some(parse_value(v)?),
            "model.init" => self.init_scheme = Some(parse_init(v)?),
            "model.init_scale" => self.init_scale = Some(parse_value(v)?),
            "train.strategy" => self.strategy = Some(parse_value(v)?),
            "train.loss" => self.loss = Some(parse_value(v)?),
            "train.optimizer" => self.optimizer = Some(parse_value(v)?),
            "train.lr" => self.learning_rate = Some(parse_value(v)?),
            "train.batch" => self.batch_size = Some(parse_value(v)?),
            "train.reg" => self.regularizer = Some(parse_value(v)?),
            "train.reg_weight" => self.reg_weight = Some(parse_value(v)?),
            "train.lp_p" => self.lp_p = Some(parse_value(v)?),
            "train.margin" => self.margin = Some(parse_value(v)?),
            "train.negatives" => self.negatives = Some(parse_value(v)?),
            "train.cc_weight" => self.cc_weight = Some(parse_value(v)?),
            "train.cc_margin" => self.cc_margin = Some(parse_value(v)?),
            "train.ph_weight" => self.ph_weight = Some(parse_value(v)?),
            "train.epochs" => self.epochs = Some(parse_value(v)?),
            "train.patience" => self.patience = Some(parse_patience(v)?),
            "train.eval_every" => self.eval_every = Some(parse_value(v)?),
            "train.untyped" => self.untyped = Some(parse_value(v)?),
            "eval.k" => self.eval_k = Some(parse_value(v)?),
            "eval.filter" => self.eval_filter = Some(parse_value(v)?),
            "seed" => self.seed = Some(parse_value(v)?),
            _ => unreachable!("key checked against KEYS"),
        }
        Ok(())
    }

    /// Errors naming the first of `keys` that is unset.
    pub fn require(&self, keys: &[&str]) -> Result<()> {
        for &key in keys {
            let present = match key {
                "dataset.path" => self.dataset_path.is_some(),
                "model.kind" => self.model_kind.is_some(),
                "model.dim" => self.model_dim.is_some(),
                "train.strategy" => self.strategy.is_some(),
                "train.loss" => self.loss.is_some(),
                _ => true,
            };
            if !present {
                return Err(Error::InvalidArgument(format!(
                    "configuration is missing required key {key}"
                )));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_fraction.unwrap_or(DEFAULT_VALID_FRACTION)
    }

    pub fn format(&self) -> FileFormat {
        self.dataset_format.unwrap_or(FileFormat::Adjacency)
    }

    pub fn init_spec(&self, dim: usize) -> InitSpec {
        let default = InitSpec::default_for(dim, self.seed());
        InitSpec {
            scheme: self.init_scheme.unwrap_or(default.scheme),
            scale: self.init_scale.unwrap_or(default.scale),
            seed: self.seed(),
        }
    }

    /// Training settings with defaults for every unset key.
    pub fn training_config(&self) -> TrainingConfig {
        let d = TrainingConfig::default();
        TrainingConfig {
            strategy: self.strategy.unwrap_or(d.strategy),
            loss: self.loss.unwrap_or(d.loss),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            optimizer: self.optimizer.unwrap_or(d.optimizer),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            regularizer: self.regularizer.unwrap_or(d.regularizer),
            reg_weight: self.reg_weight.unwrap_or(d.reg_weight),
            lp_p: self.lp_p.unwrap_or(d.lp_p),
            margin: self.margin.unwrap_or(d.margin),
            negatives: self.negatives.unwrap_or(d.negatives),
            cc_weight: self.cc_weight.unwrap_or(d.cc_weight),
            cc_margin: self.cc_margin.unwrap_or(d.cc_margin),
            ph_weight: self.ph_weight.unwrap_or(d.ph_weight),
            epochs: self.epochs.unwrap_or(d.epochs),
            patience: self.patience.unwrap_or(d.patience),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            seed: self.seed(),
            untyped: self.untyped.unwrap_or(d.untyped),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("c.cfg"))
    }

    #[test]
    fn full_file() {
        let cfg = parse(
            "# toy run\n\
             dataset.path = data/toy\n\
             dataset.format = pairs\n\
             model.kind = complex\n\
             model.dim = 32   # inline comment\n\
             train.strategy = 1vsall\n\
             train.loss = kl\n\
             train.patience = none\n\
             train.lr = 0.1\n\
             eval.filter = train+valid\n\
             seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.model_kind, Some(ModelKind::ComplEx));
        assert_eq!(cfg.model_dim, Some(32));
        assert_eq!(cfg.patience, Some(None));
        let t = cfg.training_config();
        assert_eq!((t.seed, t.patience, t.learning_rate), (7, None, 0.1));
        assert_eq!(cfg.eval_filter, Some(Filter::TrainValid));
    }

    fn line_of(r: Result<RunConfig>) -> usize {
        match r {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of(parse("seed = 1\nmodel.colour = red\n")), 2);
        assert_eq!(line_of(parse("\n\nmodel.dim = big\n")), 3);
        assert_eq!(line_of(parse("seed 1\n")), 1);
        assert_eq!(line_of(parse("seed = 1\nseed = 2\n")), 2);
        assert_eq!(line_of(parse("train.loss = hinge\n")), 1);
        assert_eq!(line_of(parse("seed =\n")), 1);
    }

    #[test]
    fn required_keys() {
        let cfg = parse("model.kind = mf\n").unwrap();
        assert!(cfg.require(&["model.kind"]).is_ok());
        assert!(cfg.require(&["model.kind", "dataset.path"]).is_err());
    }
}
