//! Flat `key = value` run configuration.
//!
//! Values are resolved in three layers: built-in defaults, then a config
//! file, then command-line overrides. Every key is known in advance and
//! unknown keys are rejected. `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gsr_core::data::{NegativeExclusion, TrainContext};
use gsr_core::evaluation::{Buckets, EvalConfig, EvalTarget, DEFAULT_EVAL_NEGATIVES};
use gsr_core::model::ModelConfig;
use gsr_core::training::TrainConfig;

use crate::ingest::{Format, IngestOptions};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: unknown key {key:?}")]
    UnknownKey { key: String, origin: String },
    #[error("{origin}: invalid value {value:?} for key {key:?}: {reason}")]
    BadValue { key: String, value: String, reason: String, origin: String },
    #[error("{origin}: expected `key = value`, found {text:?}")]
    Syntax { text: String, origin: String },
    #[error("{origin}: key {key:?} given twice")]
    Duplicate { key: String, origin: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report: PathBuf,

    pub input_format: Format,
    pub input_header: bool,
    pub input_columns: [usize; 3],
    pub input_keys: [String; 3],
    pub min_user_interactions: usize,
    pub min_item_interactions: usize,

    pub dim: usize,
    pub max_len: usize,
    pub num_layers: usize,
    pub dropout: f32,

    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda: f64,
    pub seed: u64,
    pub train_context: TrainContext,
    pub negatives: NegativeExclusion,

    pub eval_seed: u64,
    pub eval_negatives: Option<usize>,
    pub eval_target: EvalTarget,
    pub length_buckets: Buckets,
    pub frequency_buckets: Buckets,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let ingest = IngestOptions::default();
        Self {
            dataset: "dataset.gsrds".into(),
            checkpoint: "model.gsrckpt".into(),
            history: "history.tsv".into(),
            report: "report.tsv".into(),
            input_format: ingest.format,
            input_header: ingest.has_header,
            input_columns: ingest.columns,
            input_keys: ingest.keys,
            min_user_interactions: 1,
            min_item_interactions: 1,
            dim: 64,
            max_len: 50,
            num_layers: 2,
            dropout: 0.2,
            learning_rate: train.learning_rate,
            beta1: train.beta1,
            beta2: train.beta2,
            epsilon: train.epsilon,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            lambda: train.lambda,
            seed: train.seed,
            train_context: train.context,
            negatives: train.negatives,
            eval_seed: 0,
            eval_negatives: Some(DEFAULT_EVAL_NEGATIVES),
            eval_target: EvalTarget::Test,
            length_buckets: Buckets::default(),
            frequency_buckets: Buckets::default(),
            workers: 1,
        }
    }
}

/// Every key with a one-line description, in display order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "dataset cache written by preprocess and read by train/evaluate"),
    ("checkpoint", "best-validation checkpoint written by train, read by evaluate"),
    ("history", "per-epoch training log (epoch, loss, reg, valid_mrr)"),
    ("report", "machine-readable metric report written by evaluate"),
    ("input_format", "csv | tsv | jsonl | any single delimiter character"),
    ("input_header", "delimited input starts with a header line (true/false)"),
    ("input_columns", "zero-based user,item,timestamp columns of delimited input"),
    ("input_keys", "user,item,timestamp keys of JSON-lines input"),
    ("min_user_interactions", "drop users with fewer interactions (after item filtering)"),
    ("min_item_interactions", "drop items with fewer interactions"),
    ("dim", "embedding dimension"),
    ("max_len", "maximum sequence length"),
    ("num_layers", "attention blocks per tower"),
    ("dropout", "dropout rate"),
    ("learning_rate", "optimizer step size"),
    ("beta1", "first-moment decay"),
    ("beta2", "second-moment decay"),
    ("epsilon", "optimizer denominator offset"),
    ("batch_size", "users per batch"),
    ("max_epochs", "epoch limit"),
    ("patience", "epochs without validation improvement before stopping"),
    ("lambda", "L2 regularization weight"),
    ("seed", "training seed (initialization, shuffling, negatives, dropout)"),
    ("train_context", "train_valid (validation item is the last target) | train_only"),
    ("negatives", "history (never-interacted items) | target (any item but the target)"),
    ("eval_seed", "seed of the sampled evaluation candidates"),
    ("eval_negatives", "sampled negatives per user, or `all`"),
    ("eval_target", "test | valid"),
    ("length_buckets", "lower bounds of the sequence-length slices"),
    ("frequency_buckets", "lower bounds of the item-frequency slices"),
    ("workers", "evaluation threads"),
];

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_list<const N: usize>(v: &str) -> Result<[String; N], String> {
    let parts: Vec<String> = v.split(',').map(|p| p.trim().to_string()).collect();
    if parts.len() != N || parts.iter().any(|p| p.is_empty()) {
        return Err(format!("expected {N} comma-separated entries"));
    }
    Ok(parts.try_into().unwrap())
}

fn finite(v: f64) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite".into())
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment. `origin` locates it in
    /// error messages.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let r: Result<(), String> = (|| {
            match key {
                "dataset" => self.dataset = v.into(),
                "checkpoint" => self.checkpoint = v.into(),
                "history" => self.history = v.into(),
                "report" => self.report = v.into(),
                "input_format" => self.input_format = Format::parse(v).ok_or("expected csv, tsv, jsonl or one character")?,
                "input_header" => self.input_header = parse_bool(v)?,
                "input_columns" => {
                    let [a, b, c] = parse_list::<3>(v)?;
                    self.input_columns = [parse_num(&a)?, parse_num(&b)?, parse_num(&c)?];
                }
                "input_keys" => self.input_keys = parse_list::<3>(v)?,
                "min_user_interactions" => self.min_user_interactions = parse_num(v)?,
                "min_item_interactions" => self.min_item_interactions = parse_num(v)?,
                "dim" => self.dim = parse_num(v)?,
                "max_len" => self.max_len = parse_num(v)?,
                "num_layers" => self.num_layers = parse_num(v)?,
                "dropout" => self.dropout = parse_num(v)?,
                "learning_rate" => self.learning_rate = finite(parse_num(v)?)?,
                "beta1" => self.beta1 = parse_num(v)?,
                "beta2" => self.beta2 = parse_num(v)?,
                "epsilon" => self.epsilon = parse_num(v)?,
                "batch_size" => self.batch_size = parse_num(v)?,
                "max_epochs" => self.max_epochs = parse_num(v)?,
                "patience" => self.patience = parse_num(v)?,
                "lambda" => self.lambda = finite(parse_num(v)?)?,
                "seed" => self.seed = parse_num(v)?,
                "train_context" => {
                    self.train_context = match v {
                        "train_valid" => TrainContext::TrainAndValid,
                        "train_only" => TrainContext::TrainOnly,
                        _ => return Err("expected train_valid or train_only".into()),
                    }
                }
                "negatives" => {
                    self.negatives = match v {
                        "history" => NegativeExclusion::History,
                        "target" => NegativeExclusion::TargetOnly,
                        _ => return Err("expected history or target".into()),
                    }
                }
                "eval_seed" => self.eval_seed = parse_num(v)?,
                "eval_negatives" => self.eval_negatives = if v == "all" { None } else { Some(parse_num(v)?) },
                "eval_target" => {
                    self.eval_target = match v {
                        "test" => EvalTarget::Test,
                        "valid" | "validation" => EvalTarget::Validation,
                        _ => return Err("expected test or valid".into()),
                    }
                }
                "length_buckets" => self.length_buckets = Buckets::parse(v).map_err(|e| e.to_string())?,
                "frequency_buckets" => self.frequency_buckets = Buckets::parse(v).map_err(|e| e.to_string())?,
                "workers" => self.workers = parse_num(v)?,
                _ => return Err(String::new()),
            }
            Ok(())
        })();
        r.map_err(|reason| {
            if reason.is_empty() {
                ConfigError::UnknownKey { key: key.into(), origin: origin.into() }
            } else {
                ConfigError::BadValue { key: key.into(), value: v.into(), reason, origin: origin.into() }
            }
        })?;
        self.validate_key(key, origin)
    }

    fn validate_key(&self, key: &str, origin: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| {
            Err(ConfigError::BadValue { key: key.into(), value: self.get(key).unwrap_or_default(), reason: reason.into(), origin: origin.into() })
        };
        match key {
            "dim" | "max_len" | "num_layers" | "batch_size" | "max_epochs" | "patience" | "workers" => {
                if self.get(key).as_deref() == Some("0") {
                    return bad("must be at least 1");
                }
            }
            "dropout" if !(0.0..1.0).contains(&self.dropout) => return bad("must lie in [0, 1)"),
            "learning_rate" if self.learning_rate <= 0.0 => return bad("must be positive"),
            "epsilon" if self.epsilon.is_nan() || self.epsilon <= 0.0 => return bad("must be positive"),
            "beta1" if !(0.0..1.0).contains(&self.beta1) => return bad("must lie in [0, 1)"),
            "beta2" if !(0.0..1.0).contains(&self.beta2) => return bad("must lie in [0, 1)"),
            "lambda" if self.lambda < 0.0 => return bad("must be non-negative"),
            "eval_negatives" if self.eval_negatives == Some(0) => return bad("must be at least 1 or `all`"),
            _ => {}
        }
        Ok(())
    }

    /// Canonical text of one key's current value.
    pub fn get(&self, key: &str) -> Option<String> {
        let join = |xs: &[String]| xs.join(",");
        Some(match key {
            "dataset" => self.dataset.display().to_string(),
            "checkpoint" => self.checkpoint.display().to_string(),
            "history" => self.history.display().to_string(),
            "report" => self.report.display().to_string(),
            "input_format" => self.input_format.name(),
            "input_header" => self.input_header.to_string(),
            "input_columns" => join(&self.input_columns.map(|c| c.to_string())),
            "input_keys" => join(&self.input_keys),
            "min_user_interactions" => self.min_user_interactions.to_string(),
            "min_item_interactions" => self.min_item_interactions.to_string(),
            "dim" => self.dim.to_string(),
            "max_len" => self.max_len.to_string(),
            "num_layers" => self.num_layers.to_string(),
            "dropout" => self.dropout.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "lambda" => self.lambda.to_string(),
            "seed" => self.seed.to_string(),
            "train_context" => match self.train_context {
                TrainContext::TrainAndValid => "train_valid".into(),
                TrainContext::TrainOnly => "train_only".into(),
            },
            "negatives" => match self.negatives {
                NegativeExclusion::History => "history".into(),
                NegativeExclusion::TargetOnly => "target".into(),
            },
            "eval_seed" => self.eval_seed.to_string(),
            "eval_negatives" => self.eval_negatives.map_or("all".into(), |k| k.to_string()),
            "eval_target" => match self.eval_target {
                EvalTarget::Test => "test".into(),
                EvalTarget::Validation => "valid".into(),
            },
            "length_buckets" => self.length_buckets.bounds_string(),
            "frequency_buckets" => self.frequency_buckets.bounds_string(),
            "workers" => self.workers.to_string(),
            _ => return None,
        })
    }

    /// Applies the assignments of a config file's text.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let origin = format!("{source}:{}", i + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { text: raw.trim().into(), origin });
            };
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::Duplicate { key: k.into(), origin });
            }
            self.set(k, v, &origin)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies a command-line `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let origin = format!("--set {assignment}");
        let Some((k, v)) = assignment.split_once('=') else {
            return Err(ConfigError::Syntax { text: assignment.into(), origin });
        };
        self.set(k.trim(), v, &origin)
    }

    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve<S: AsRef<str>>(file: Option<&Path>, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(p) = file {
            cfg.apply_file(p)?;
        }
        for o in overrides {
            cfg.apply_override(o.as_ref())?;
        }
        Ok(cfg)
    }

    /// All keys as a loadable config file.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, help) in KEYS {
            let _ = writeln!(out, "# {help}\n{k} = {}", self.get(k).unwrap());
        }
        out
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            format: self.input_format.clone(),
            has_header: self.input_header,
            columns: self.input_columns,
            keys: self.input_keys.clone(),
        }
    }

    pub fn model_config(&self, num_items: usize) -> ModelConfig {
        ModelConfig { dim: self.dim, max_len: self.max_len, num_layers: self.num_layers, dropout_rate: self.dropout, num_items }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lambda: self.lambda,
            seed: self.seed,
            context: self.train_context,
            negatives: self.negatives,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            num_negatives: self.eval_negatives,
            negatives: self.negatives,
            context: self.train_context,
            seed: self.eval_seed,
        }
    }
}
