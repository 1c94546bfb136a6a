//! Adaptive-moment optimizer and the epoch loop with validation-based early
//! stopping.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// f64 math under no_std
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;

use crate::data::{make_training_batch, shuffled_users, BatchOptions, DataError, NegativeExclusion, SplitDataset, TrainContext};
use crate::evaluation::{evaluate, metrics_from_ranks, EvalConfig, EvalError, EvalTarget};
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::numerics::{Real, Tensor};
use crate::objective::{batch_loss_and_grad, ObjectiveError};
use crate::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset has no trainable positions")]
    NoTrainablePositions,
    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("gradient count {grads} does not match parameter count {params}")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("checkpoint sink failed: {0}")]
    Sink(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// L2 weight on every trainable parameter.
    pub lambda: f64,
    pub seed: u64,
    pub context: TrainContext,
    pub negatives: NegativeExclusion,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            max_epochs: 200,
            patience: 20,
            lambda: 0.0,
            seed: 0,
            context: TrainContext::TrainAndValid,
            negatives: NegativeExclusion::History,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("beta1/beta2 must lie in [0, 1), got {}/{}", self.beta1, self.beta2));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("patience, batch_size and max_epochs must be >= 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        Ok(())
    }
}

/// Optimizer moments and early-stopping bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T = f32> {
    pub epoch: usize,
    pub step: u64,
    /// `beta1^step` and `beta2^step`, kept as running products.
    pub beta_powers: (f64, f64),
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub best_valid_mrr: f64,
    pub epochs_since_improvement: usize,
}

impl<T: Real> TrainState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            epoch: 0,
            step: 0,
            beta_powers: (1.0, 1.0),
            first_moment: zeros(),
            second_moment: zeros(),
            best_valid_mrr: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
        }
    }
}

/// One bias-corrected adaptive-moment update. Padding rows stay zero.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let n = params.tensors().len();
    if grads.len() != n || state.first_moment.len() != n {
        return Err(TrainError::ShapeMismatch { params: n, grads: grads.len() });
    }
    if let Some(i) = (0..n).find(|&i| grads[i].shape() != params.tensors()[i].shape()) {
        return Err(TrainError::Config(format!("gradient shape mismatch for {}", params.name(i))));
    }
    state.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    state.beta_powers = (state.beta_powers.0 * b1, state.beta_powers.1 * b2);
    let (bc1, bc2) = (1.0 - state.beta_powers.0, 1.0 - state.beta_powers.1);
    let lr = cfg.learning_rate;
    for (i, grad) in grads.iter().enumerate() {
        let skip = if params.has_padding_row(i) { grad.cols() } else { 0 };
        let p = &mut params.tensors_mut()[i];
        let (m, v) = (&mut state.first_moment[i], &mut state.second_moment[i]);
        for j in skip..p.len() {
            let g = grad.data()[j].f64();
            let mj = b1 * m.data()[j].f64() + (1.0 - b1) * g;
            let vj = b2 * v.data()[j].f64() + (1.0 - b2) * g * g;
            m.data_mut()[j] = T::of(mj);
            v.data_mut()[j] = T::of(vj);
            let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + cfg.epsilon);
            p.data_mut()[j] = T::of(p.data()[j].f64() - update);
        }
    }
    params.zero_padding_rows();
    Ok(())
}

/// Per-epoch record written to the history log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Ranking loss averaged over all valid positions of the epoch.
    pub loss: f64,
    /// Regularization term averaged over batches.
    pub reg: f64,
    pub valid_mrr: f64,
}

/// Supplies the model-selection metric after each epoch.
pub trait Validator {
    fn validation_mrr(&mut self, params: &ModelParams) -> Result<f64, TrainError>;
}

/// Sequential validation MRR on the held-out validation items.
pub struct SampledValidator<'a> {
    pub split: &'a SplitDataset,
    pub config: EvalConfig,
}

impl Validator for SampledValidator<'_> {
    fn validation_mrr(&mut self, params: &ModelParams) -> Result<f64, TrainError> {
        let cases = evaluate(params, self.split, EvalTarget::Validation, &self.config)?;
        Ok(metrics_from_ranks(cases.iter().map(|c| c.rank)).map_or(0.0, |m| m.mrr))
    }
}

/// Receives epoch records and improved checkpoints as training proceeds.
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<(), TrainError> {
        Ok(())
    }

    fn on_improvement(&mut self, _record: &EpochRecord, _params: &ModelParams) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation MRR.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_mrr: f64,
}

/// Trains from a seeded initialization and returns the validation-best
/// parameters.
pub fn train<V: Validator, O: TrainObserver>(
    split: &SplitDataset,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    validator: &mut V,
    observer: &mut O,
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    let mut init_rng = SeededRng::seed_from_u64(derive_seed(train_cfg.seed, 0, 0));
    let params = ModelParams::init(model_cfg, &mut init_rng)?;
    train_from(split, params, train_cfg, validator, observer)
}

/// As [`train`], starting from given parameters.
pub fn train_from<V: Validator, O: TrainObserver>(
    split: &SplitDataset,
    mut params: ModelParams,
    cfg: &TrainConfig,
    validator: &mut V,
    observer: &mut O,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let opts = BatchOptions { max_len: params.config.max_len, context: cfg.context, negatives: cfg.negatives };
    let mut state = TrainState::new(&params);
    let mut history = Vec::new();
    let mut best: Option<(ModelParams, usize)> = None;

    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        let order = shuffled_users(split, derive_seed(cfg.seed, 1, epoch as u64));
        let (mut loss_sum, mut positions, mut reg_sum, mut batches) = (0.0f64, 0usize, 0.0f64, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = derive_seed(cfg.seed, 2, ((epoch as u64) << 32) | b as u64);
            let batch = make_training_batch(split, chunk, opts, batch_seed)?;
            if batch.num_valid() == 0 {
                continue;
            }
            let mut dropout_rng = SeededRng::seed_from_u64(derive_seed(cfg.seed, 3, ((epoch as u64) << 32) | b as u64));
            let (loss, grads) = batch_loss_and_grad(&params, &batch, cfg.lambda, Some(&mut dropout_rng))?;
            if !loss.total.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            adam_step(&mut params, &grads, &mut state, cfg)?;
            loss_sum += loss.bpr_term * loss.num_valid_positions as f64;
            positions += loss.num_valid_positions;
            reg_sum += loss.reg_term;
            batches += 1;
        }
        if positions == 0 {
            return Err(TrainError::NoTrainablePositions);
        }
        if !params.all_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let valid_mrr = validator.validation_mrr(&params)?;
        let record = EpochRecord { epoch, loss: loss_sum / positions as f64, reg: reg_sum / batches as f64, valid_mrr };
        history.push(record);
        observer.on_epoch(&record)?;
        if valid_mrr > state.best_valid_mrr {
            state.best_valid_mrr = valid_mrr;
            state.epochs_since_improvement = 0;
            observer.on_improvement(&record, &params)?;
            best = Some((params.clone(), epoch));
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.patience {
                break;
            }
        }
    }
    let (params, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { params, history, best_epoch, best_valid_mrr: state.best_valid_mrr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Slot, Tower};

    fn tiny() -> ModelParams {
        let cfg = ModelConfig { dim: 3, max_len: 4, num_layers: 1, dropout_rate: 0.0, num_items: 5 };
        ModelParams::init(cfg, &mut SeededRng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut p = tiny();
        let before = p.clone();
        let grads: Vec<Tensor> = p
            .tensors()
            .iter()
            .map(|t| Tensor::from_fn(t.shape(), |i| if i % 2 == 0 { 0.7 } else { -3.0 }))
            .collect();
        let mut state = TrainState::new(&p);
        let cfg = TrainConfig::default();
        adam_step(&mut p, &grads, &mut state, &cfg).unwrap();
        for i in 0..p.tensors().len() {
            let skip = if p.has_padding_row(i) { p.tensors()[i].cols() } else { 0 };
            for j in skip..p.tensors()[i].len() {
                let delta = (p.tensors()[i].data()[j] - before.tensors()[i].data()[j]) as f64;
                let expect = if j % 2 == 0 { -1e-3 } else { 1e-3 };
                assert!((delta - expect).abs() < 1e-6, "{delta} vs {expect}");
            }
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = tiny();
        let before = p.clone();
        let grads: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut state = TrainState::new(&p);
        adam_step(&mut p, &grads, &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn padding_row_stays_frozen() {
        let mut p = tiny();
        let grads: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::filled(t.shape(), 5.0)).collect();
        let mut state = TrainState::new(&p);
        for _ in 0..3 {
            adam_step(&mut p, &grads, &mut state, &TrainConfig::default()).unwrap();
        }
        for tower in Tower::BOTH {
            assert!(p.get(Slot::ItemTable(tower)).row(0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = tiny();
        let mut state = TrainState::new(&p);
        let err = adam_step(&mut p, &[Tensor::zeros(&[1])], &mut state, &TrainConfig::default());
        assert!(matches!(err, Err(TrainError::ShapeMismatch { .. })));
        let mut grads: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        grads[3] = Tensor::zeros(&[7]);
        assert!(adam_step(&mut p, &grads, &mut state, &TrainConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { lambda: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
