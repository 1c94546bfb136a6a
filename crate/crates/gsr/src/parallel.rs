//! Evaluation across a fixed-size thread pool. Results come back in user
//! order, so reports do not depend on the worker count.

use gsr_core::data::SplitDataset;
use gsr_core::evaluation::{evaluate_user, item_frequencies, metrics_from_ranks, EvalCase, EvalConfig, EvalError, EvalTarget};
use gsr_core::model::ModelParams;
use gsr_core::training::{TrainError, Validator};
use rayon::prelude::*;

pub fn evaluate(
    params: &ModelParams,
    split: &SplitDataset,
    target: EvalTarget,
    cfg: &EvalConfig,
    workers: usize,
) -> Result<Vec<EvalCase>, EvalError> {
    let freq = item_frequencies(split, cfg.context);
    let users: Vec<u32> = split.user_ids().collect();
    let one = |&u: &u32| evaluate_user(params, split, u, target, cfg, &freq);
    let cases: Vec<Option<EvalCase>> = if workers <= 1 {
        users.iter().map(one).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool");
        pool.install(|| users.par_iter().map(one).collect::<Result<_, _>>())?
    };
    Ok(cases.into_iter().flatten().collect())
}

/// Validation MRR with the configured candidate protocol.
pub struct ParallelValidator<'a> {
    pub split: &'a SplitDataset,
    pub config: EvalConfig,
    pub workers: usize,
}

impl Validator for ParallelValidator<'_> {
    fn validation_mrr(&mut self, params: &ModelParams) -> Result<f64, TrainError> {
        let cases = evaluate(params, self.split, EvalTarget::Validation, &self.config, self.workers)?;
        Ok(metrics_from_ranks(cases.iter().map(|c| c.rank)).map_or(0.0, |m| m.mrr))
    }
}
