//! The `preprocess`, `train` and `evaluate` commands as library calls.
//! Each failure class maps to a distinct process exit code.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use gsr_core::data::{split_leave_one_out, DataError, InteractionDataset};
use gsr_core::evaluation::{slice_metrics, EvalCase, EvalError, SlicedReport};
use gsr_core::model::{ModelError, ModelParams};
use gsr_core::objective::ObjectiveError;
use gsr_core::training::{self, EpochRecord, TrainError, TrainObserver, TrainOutcome};
use log::info;

use crate::cache::{self, CacheError};
use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, RunConfig};
use crate::history::HistoryWriter;
use crate::ingest::{self, IngestError};
use crate::parallel::{self, ParallelValidator};
use crate::report::{render_machine, Report};

pub const EXIT_DATA: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_COMPAT: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numeric(String),
    #[error("incompatible checkpoint: {0}")]
    Compat(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Compat(_) => EXIT_COMPAT,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CacheError> for CliError {
    fn from(e: CacheError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Compat(e.to_string()),
        }
    }
}

fn from_model(e: ModelError) -> CliError {
    match e {
        ModelError::Config(_) => CliError::Config(e.to_string()),
        ModelError::ItemOutOfRange { .. } | ModelError::InputLength { .. } => CliError::Compat(e.to_string()),
        ModelError::Numerics(_) => CliError::Numeric(e.to_string()),
    }
}

fn from_objective(e: ObjectiveError) -> CliError {
    match e {
        ObjectiveError::Model(m) => from_model(m),
        ObjectiveError::NonPositiveCovariance(_) => CliError::Numeric(e.to_string()),
        ObjectiveError::BadLambda(_) => CliError::Config(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => from_model(m),
            EvalError::Objective(o) => from_objective(o),
            EvalError::Buckets(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            TrainError::Sink(_) => CliError::Io(e.to_string()),
            TrainError::Model(m) => from_model(m),
            TrainError::Objective(o) => from_objective(o),
            TrainError::Eval(v) => v.into(),
            TrainError::ShapeMismatch { .. } => CliError::Numeric(e.to_string()),
            TrainError::NoTrainablePositions | TrainError::Data(_) => CliError::Data(e.to_string()),
        }
    }
}

/// Dataset statistics in the usual users / items / actions / density form.
pub fn format_stats(ds: &InteractionDataset) -> String {
    format!(
        "users\t{}\nitems\t{}\nactions\t{}\ndensity\t{:.3}%\n",
        ds.num_users(),
        ds.num_items(),
        ds.num_actions(),
        100.0 * ds.density()
    )
}

/// Reads a raw log, applies the interaction floors and writes the cache.
pub fn preprocess(input: &Path, output: &Path, cfg: &RunConfig) -> Result<InteractionDataset, CliError> {
    let mut ds = ingest::load_dataset(input, &cfg.ingest_options())?;
    if cfg.min_user_interactions > 1 || cfg.min_item_interactions > 1 {
        ds = ds.with_min_counts(cfg.min_user_interactions, cfg.min_item_interactions)?;
    }
    cache::save(&ds, output)?;
    info!("wrote {} ({} users, {} items)", output.display(), ds.num_users(), ds.num_items());
    Ok(ds)
}

struct FileSink<'a> {
    history: HistoryWriter<BufWriter<File>>,
    checkpoint: &'a Path,
}

impl TrainObserver for FileSink<'_> {
    fn on_epoch(&mut self, r: &EpochRecord) -> Result<(), TrainError> {
        info!("epoch {} loss {:.6} reg {:.6} valid_mrr {:.6}", r.epoch, r.loss, r.reg, r.valid_mrr);
        self.history.write(r).map_err(|e| TrainError::Sink(e.to_string()))
    }

    fn on_improvement(&mut self, r: &EpochRecord, params: &ModelParams) -> Result<(), TrainError> {
        info!("epoch {}: new best validation MRR, saving {}", r.epoch, self.checkpoint.display());
        checkpoint::save(params, self.checkpoint).map_err(|e| TrainError::Sink(e.to_string()))
    }
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Trains on the cached dataset, writing the history log and the
/// best-validation checkpoint.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    let ds = cache::load(&cfg.dataset)?;
    let split = split_leave_one_out(&ds);
    let model_cfg = cfg.model_config(ds.num_items());
    model_cfg.validate().map_err(from_model)?;
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let history = HistoryWriter::new(BufWriter::new(create(&cfg.history)?)).map_err(|e| CliError::Io(e.to_string()))?;
    let mut sink = FileSink { history, checkpoint: &cfg.checkpoint };
    let mut validator = ParallelValidator { split: &split, config: cfg.eval_config(), workers: cfg.workers };
    Ok(training::train(&split, model_cfg, &train_cfg, &mut validator, &mut sink)?)
}

fn build_report(cfg: &RunConfig, cases: &[EvalCase]) -> Result<Report, CliError> {
    let sliced: SlicedReport = slice_metrics(cases, &cfg.length_buckets, &cfg.frequency_buckets)?;
    Ok(Report { target: cfg.eval_target, seed: cfg.eval_seed, num_negatives: cfg.eval_negatives, sliced })
}

fn write_report(cfg: &RunConfig, report: &Report) -> Result<(), CliError> {
    std::fs::write(&cfg.report, render_machine(report)).map_err(|e| CliError::Io(format!("{}: {e}", cfg.report.display())))
}

/// Scores the checkpoint on the held-out items and writes the report file.
pub fn evaluate(cfg: &RunConfig) -> Result<Report, CliError> {
    let ds = cache::load(&cfg.dataset)?;
    let expected = cfg.model_config(ds.num_items());
    let params = checkpoint::load_for(&cfg.checkpoint, &expected)?;
    let split = split_leave_one_out(&ds);
    let cases = parallel::evaluate(&params, &split, cfg.eval_target, &cfg.eval_config(), cfg.workers)?;
    let report = build_report(cfg, &cases)?;
    write_report(cfg, &report)?;
    Ok(report)
}

/// Builds and writes a report from given ranks without a model. Each rank
/// becomes one user with an empty context and an unseen item.
pub fn evaluate_ranks(cfg: &RunConfig, ranks: &[usize]) -> Result<Report, CliError> {
    if let Some(&r) = ranks.iter().find(|&&r| r == 0) {
        return Err(CliError::Config(format!("rank {r} is not 1-based")));
    }
    let cases: Vec<EvalCase> = ranks
        .iter()
        .enumerate()
        .map(|(i, &rank)| EvalCase { user: i as u32 + 1, rank, num_candidates: rank, context_len: 0, item_frequency: 0 })
        .collect();
    let report = build_report(cfg, &cases)?;
    write_report(cfg, &report)?;
    Ok(report)
}
