//! Squared 2-Wasserstein distance between diagonal Gaussians and the
//! pairwise ranking loss built on it.

use alloc::vec::Vec;

// f64 math under no_std
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::data::SequenceBatch;
use crate::model::{encode_rows, register_params, GaussianParams, ModelError, ModelParams, Slot, Tower};
use crate::numerics::{softplus, NumericsError, Real, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("covariance entry {0} is not strictly positive")]
    NonPositiveCovariance(f64),
    #[error("batch has no valid positions")]
    EmptyBatch,
    #[error("lambda must be finite and >= 0, got {0}")]
    BadLambda(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<NumericsError> for ObjectiveError {
    fn from(e: NumericsError) -> Self {
        ObjectiveError::Model(ModelError::Numerics(e))
    }
}

/// `‖μa − μb‖² + ‖√σa − √σb‖²` for diagonal covariances.
pub fn wasserstein2_diag<T: Real>(a: &GaussianParams<T>, b: &GaussianParams<T>) -> Result<f64, ObjectiveError> {
    if a.mean.len() != b.mean.len() || a.cov_diag.len() != a.mean.len() || b.cov_diag.len() != b.mean.len() {
        return Err(ObjectiveError::Dimension(a.mean.len(), b.mean.len()));
    }
    if let Some(&c) = a.cov_diag.iter().chain(&b.cov_diag).find(|&&c| c.is_nan() || c <= T::zero()) {
        return Err(ObjectiveError::NonPositiveCovariance(c.f64()));
    }
    let mut acc = 0.0f64;
    for k in 0..a.mean.len() {
        let dm = a.mean[k].f64() - b.mean[k].f64();
        let ds = a.cov_diag[k].f64().sqrt() - b.cov_diag[k].f64().sqrt();
        acc += dm * dm + ds * ds;
    }
    Ok(acc)
}

/// `−log σ(d(neg, pred) − d(pos, pred))`.
pub fn bpr_position_loss<T: Real>(
    pred: &GaussianParams<T>,
    pos: &GaussianParams<T>,
    neg: &GaussianParams<T>,
) -> Result<f64, ObjectiveError> {
    let d_pos = wasserstein2_diag(pos, pred)?;
    let d_neg = wasserstein2_diag(neg, pred)?;
    Ok(softplus(d_pos - d_neg))
}

/// Loss of one batch. `bpr_term` is the mean over valid positions;
/// multiply by `num_valid_positions` for the summed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub bpr_term: f64,
    pub reg_term: f64,
    pub total: f64,
    pub num_valid_positions: usize,
}

fn record<'a, T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'a, T>,
    params: &'a ModelParams<T>,
    batch: &SequenceBatch,
    lambda: f64,
    rng: Option<&mut R>,
) -> Result<(crate::numerics::Var, crate::numerics::Var, crate::numerics::Var, usize), ObjectiveError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ObjectiveError::BadLambda(lambda));
    }
    let n = batch.max_len;
    let valid_count = batch.num_valid();
    let window = batch.active_window();
    if valid_count == 0 || window == 0 {
        return Err(ObjectiveError::EmptyBatch);
    }
    let cols = n - window..n;
    let take = |ids: &[u32]| -> Vec<u32> { ids.chunks(n).flat_map(|r| r[cols.clone()].iter().copied()).collect() };
    let inputs = take(&batch.input_ids);
    let targets = take(&batch.target_ids);
    let negatives = take(&batch.negative_ids);
    let valid: Vec<bool> = batch.valid_mask.chunks(n).flat_map(|r| r[cols.clone()].iter().copied()).collect();

    let vars = register_params(tape, params);
    let enc = encode_rows(tape, params, &vars, &inputs, window, rng)?;
    let cfg = params.config;
    let mean_table = vars[ModelParams::<T>::index_of(&cfg, Slot::ItemTable(Tower::Mean))];
    let cov_table = vars[ModelParams::<T>::index_of(&cfg, Slot::ItemTable(Tower::Cov))];
    let item = |tape: &mut Tape<'a, T>, ids: &[u32]| -> Result<_, ObjectiveError> {
        let m = tape.gather_rows(mean_table, ids)?;
        let c = tape.gather_rows(cov_table, ids)?;
        Ok((m, tape.elu_plus_one(c)))
    };
    let (pos_m, pos_c) = item(tape, &targets)?;
    let (neg_m, neg_c) = item(tape, &negatives)?;
    let d_pos = tape.wasserstein_rows(pos_m, pos_c, enc.mean, enc.cov)?;
    let d_neg = tape.wasserstein_rows(neg_m, neg_c, enc.mean, enc.cov)?;
    let bpr = tape.bpr_mean(d_pos, d_neg, &valid)?;

    let mut reg = None;
    for (i, &v) in vars.iter().enumerate() {
        let skip = usize::from(params.has_padding_row(i));
        let s = tape.sum_squares(v, skip);
        reg = Some(match reg {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let reg = tape.scale(reg.expect("at least one parameter"), T::of(lambda));
    let total = tape.add(bpr, reg)?;
    Ok((bpr, reg, total, valid_count))
}

fn breakdown<T: Real>(tape: &Tape<'_, T>, bpr: crate::numerics::Var, reg: crate::numerics::Var, count: usize) -> LossBreakdown {
    let b = tape.value(bpr).data()[0].f64();
    let r = tape.value(reg).data()[0].f64();
    LossBreakdown { bpr_term: b, reg_term: r, total: b + r, num_valid_positions: count }
}

/// Evaluates the loss. Dropout is applied only when `rng` is given.
pub fn batch_loss<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    batch: &SequenceBatch,
    lambda: f64,
    rng: Option<&mut R>,
) -> Result<LossBreakdown, ObjectiveError> {
    let mut tape = Tape::new();
    let (bpr, reg, _, count) = record(&mut tape, params, batch, lambda, rng)?;
    Ok(breakdown(&tape, bpr, reg, count))
}

/// Loss plus one gradient tensor per parameter (canonical order). Padding
/// rows of the item tables receive zero gradient.
pub fn batch_loss_and_grad<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    batch: &SequenceBatch,
    lambda: f64,
    rng: Option<&mut R>,
) -> Result<(LossBreakdown, Vec<Tensor<T>>), ObjectiveError> {
    let mut tape = Tape::new();
    let (bpr, reg, total, count) = record(&mut tape, params, batch, lambda, rng)?;
    let out = breakdown(&tape, bpr, reg, count);
    let grads = tape.backward(total)?.into_vec();
    let mut result = Vec::with_capacity(params.tensors().len());
    for (i, t) in params.tensors().iter().enumerate() {
        let mut g = grads.get(i).cloned().flatten().unwrap_or_else(|| Tensor::zeros(t.shape()));
        if params.has_padding_row(i) {
            g.row_mut(0).iter_mut().for_each(|v| *v = T::zero());
        }
        result.push(g);
    }
    Ok((out, result))
}
