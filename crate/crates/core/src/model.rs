//! Twin mean/covariance Transformer encoders over item sequences.
//!
//! Each item owns a mean row and a covariance row. A sequence is encoded by
//! two structurally identical towers sharing no parameters; the covariance
//! tower output passes through `elu(·) + 1` so every inferred variance is
//! strictly positive.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{pad_or_truncate, PAD};
use crate::numerics::{ops, NumericsError, Real, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-8;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("item id {id} out of range 0..={num_items}")]
    ItemOutOfRange { id: u32, num_items: usize },
    #[error("expected {expected} input ids, got {actual}")]
    InputLength { expected: usize, actual: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub max_len: usize,
    pub num_layers: usize,
    pub dropout_rate: f32,
    pub num_items: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 || self.max_len == 0 || self.num_layers == 0 {
            return Err(ModelError::Config(format!(
                "dim, max_len and num_layers must be >= 1 (got {}, {}, {})",
                self.dim, self.max_len, self.num_layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        if self.num_items == 0 {
            return Err(ModelError::Config("num_items must be >= 1".into()));
        }
        Ok(())
    }

    pub fn num_tensors(&self) -> usize {
        2 * (2 + BLOCK_TENSORS.len() * self.num_layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tower {
    Mean,
    Cov,
}

impl Tower {
    pub const BOTH: [Tower; 2] = [Tower::Mean, Tower::Cov];

    fn name(self) -> &'static str {
        match self {
            Tower::Mean => "mean",
            Tower::Cov => "cov",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTensor {
    Query,
    Key,
    Value,
    Ffn1Weight,
    Ffn1Bias,
    Ffn2Weight,
    Ffn2Bias,
    Norm1Gain,
    Norm1Bias,
    Norm2Gain,
    Norm2Bias,
}

const BLOCK_TENSORS: [BlockTensor; 11] = [
    BlockTensor::Query,
    BlockTensor::Key,
    BlockTensor::Value,
    BlockTensor::Ffn1Weight,
    BlockTensor::Ffn1Bias,
    BlockTensor::Ffn2Weight,
    BlockTensor::Ffn2Bias,
    BlockTensor::Norm1Gain,
    BlockTensor::Norm1Bias,
    BlockTensor::Norm2Gain,
    BlockTensor::Norm2Bias,
];

impl BlockTensor {
    fn name(self) -> &'static str {
        match self {
            BlockTensor::Query => "query",
            BlockTensor::Key => "key",
            BlockTensor::Value => "value",
            BlockTensor::Ffn1Weight => "ffn1.weight",
            BlockTensor::Ffn1Bias => "ffn1.bias",
            BlockTensor::Ffn2Weight => "ffn2.weight",
            BlockTensor::Ffn2Bias => "ffn2.bias",
            BlockTensor::Norm1Gain => "norm1.gain",
            BlockTensor::Norm1Bias => "norm1.bias",
            BlockTensor::Norm2Gain => "norm2.gain",
            BlockTensor::Norm2Bias => "norm2.bias",
        }
    }

    fn is_matrix(self) -> bool {
        matches!(
            self,
            BlockTensor::Query | BlockTensor::Key | BlockTensor::Value | BlockTensor::Ffn1Weight | BlockTensor::Ffn2Weight
        )
    }
}

/// Kind of tensor at a flat parameter index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    ItemTable(Tower),
    Positional(Tower),
    Block(Tower, usize, BlockTensor),
}

/// All learnable tensors in a fixed order (see [`ModelParams::slot`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub config: ModelConfig,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Normal(0, 0.02) weights and tables, unit layer-norm gains, zero
    /// biases, zero padding rows.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
        let mut tensors = Vec::with_capacity(config.num_tensors());
        for index in 0..config.num_tensors() {
            let shape = Self::shape_for(&config, Self::slot_of(&config, index));
            let t = match Self::slot_of(&config, index) {
                Slot::Block(_, _, BlockTensor::Norm1Gain | BlockTensor::Norm2Gain) => Tensor::filled(&shape, T::one()),
                Slot::Block(_, _, b) if !b.is_matrix() => Tensor::zeros(&shape),
                _ => Tensor::from_fn(&shape, |_| T::of(normal.sample(rng))),
            };
            tensors.push(t);
        }
        let mut p = Self { config, tensors };
        p.zero_padding_rows();
        Ok(p)
    }

    /// Assembles parameters from tensors in canonical order, checking shapes.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self, ModelError> {
        config.validate()?;
        if tensors.len() != config.num_tensors() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, got {}",
                config.num_tensors(),
                tensors.len()
            )));
        }
        for (i, t) in tensors.iter().enumerate() {
            let want = Self::shape_for(&config, Self::slot_of(&config, i));
            if t.shape() != want.as_slice() {
                return Err(ModelError::Config(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    Self::name_of(&config, i),
                    t.shape(),
                    want
                )));
            }
        }
        Ok(Self { config, tensors })
    }

    fn per_tower(config: &ModelConfig) -> usize {
        2 + BLOCK_TENSORS.len() * config.num_layers
    }

    pub fn slot_of(config: &ModelConfig, index: usize) -> Slot {
        let per = Self::per_tower(config);
        let tower = if index < per { Tower::Mean } else { Tower::Cov };
        match index % per {
            0 => Slot::ItemTable(tower),
            1 => Slot::Positional(tower),
            k => {
                let k = k - 2;
                Slot::Block(tower, k / BLOCK_TENSORS.len(), BLOCK_TENSORS[k % BLOCK_TENSORS.len()])
            }
        }
    }

    pub fn index_of(config: &ModelConfig, slot: Slot) -> usize {
        let per = Self::per_tower(config);
        let (tower, local) = match slot {
            Slot::ItemTable(t) => (t, 0),
            Slot::Positional(t) => (t, 1),
            Slot::Block(t, layer, b) => {
                let pos = BLOCK_TENSORS.iter().position(|&x| x == b).expect("listed");
                (t, 2 + layer * BLOCK_TENSORS.len() + pos)
            }
        };
        match tower {
            Tower::Mean => local,
            Tower::Cov => per + local,
        }
    }

    pub fn shape_for(config: &ModelConfig, slot: Slot) -> Vec<usize> {
        let d = config.dim;
        match slot {
            Slot::ItemTable(_) => alloc::vec![config.num_items + 1, d],
            Slot::Positional(_) => alloc::vec![config.max_len, d],
            Slot::Block(_, _, b) if b.is_matrix() => alloc::vec![d, d],
            Slot::Block(..) => alloc::vec![d],
        }
    }

    pub fn name_of(config: &ModelConfig, index: usize) -> String {
        match Self::slot_of(config, index) {
            Slot::ItemTable(t) => format!("{}.item_embedding", t.name()),
            Slot::Positional(t) => format!("{}.position_embedding", t.name()),
            Slot::Block(t, l, b) => format!("{}.layer{}.{}", t.name(), l, b.name()),
        }
    }

    pub fn slot(&self, index: usize) -> Slot {
        Self::slot_of(&self.config, index)
    }

    pub fn name(&self, index: usize) -> String {
        Self::name_of(&self.config, index)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    /// Mutable access for optimizers and tests. Callers must keep shapes.
    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, slot: Slot) -> &Tensor<T> {
        &self.tensors[Self::index_of(&self.config, slot)]
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut Tensor<T> {
        let i = Self::index_of(&self.config, slot);
        &mut self.tensors[i]
    }

    /// Whether tensor `index` has a frozen padding row 0.
    pub fn has_padding_row(&self, index: usize) -> bool {
        matches!(self.slot(index), Slot::ItemTable(_))
    }

    pub fn zero_padding_rows(&mut self) {
        for tower in Tower::BOTH {
            self.get_mut(Slot::ItemTable(tower)).row_mut(PAD as usize).iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Sum of squares over all trainable entries, padding rows excluded.
    pub fn l2_norm_squared(&self) -> f64 {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let skip = if self.has_padding_row(i) { t.cols() } else { 0 };
                t.data()[skip..].iter().map(|v| v.f64() * v.f64()).sum::<f64>()
            })
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams { config: self.config, tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        match ids.iter().find(|&&i| i as usize > self.config.num_items) {
            Some(&id) => Err(ModelError::ItemOutOfRange { id, num_items: self.config.num_items }),
            None => Ok(()),
        }
    }
}

/// Diagonal Gaussian `N(mean, diag(cov_diag))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams<T = f32> {
    pub mean: Vec<T>,
    pub cov_diag: Vec<T>,
}

impl<T: Real> GaussianParams<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[inline]
pub fn covariance_output_scalar<T: Real>(o: T) -> T {
    ops::elu_plus_one_scalar(o)
}

/// `elu(o) + 1`, element-wise. Strictly positive.
pub fn covariance_output<T: Real>(o: &[T]) -> Vec<T> {
    o.iter().map(|&v| covariance_output_scalar(v)).collect()
}

/// Distribution of item `item_id` read from the embedding tables.
pub fn item_distribution<T: Real>(params: &ModelParams<T>, item_id: u32) -> Result<GaussianParams<T>, ModelError> {
    if item_id == PAD || item_id as usize > params.config.num_items {
        return Err(ModelError::ItemOutOfRange { id: item_id, num_items: params.config.num_items });
    }
    let r = item_id as usize;
    Ok(GaussianParams {
        mean: params.get(Slot::ItemTable(Tower::Mean)).row(r).to_vec(),
        cov_diag: covariance_output(params.get(Slot::ItemTable(Tower::Cov)).row(r)),
    })
}

/// Tower outputs for `rows = batch × window` positions, recorded on `tape`.
pub struct EncodedRows {
    pub mean: Var,
    /// Positive covariance (`elu + 1` already applied).
    pub cov: Var,
    /// Attention nodes, indexed `[tower][layer]` with mean first.
    pub attention: [Vec<Var>; 2],
}

/// Registers every parameter on `tape`, returning one var per tensor.
pub fn register_params<'a, T: Real>(tape: &mut Tape<'a, T>, params: &'a ModelParams<T>) -> Vec<Var> {
    params.tensors.iter().enumerate().map(|(i, t)| tape.param(i, t)).collect()
}

/// Encodes `ids` laid out as `ids.len() / window` rows of the last `window`
/// positions of length-`max_len` sequences.
///
/// Leading positions that are padding in every row can be left out because
/// they are masked as keys and never feed a later position.
pub fn encode_rows<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    params: &ModelParams<T>,
    vars: &[Var],
    ids: &[u32],
    window: usize,
    mut rng: Option<&mut R>,
) -> Result<EncodedRows, ModelError> {
    let cfg = params.config;
    if window == 0 || window > cfg.max_len || !ids.len().is_multiple_of(window) {
        return Err(ModelError::InputLength { expected: cfg.max_len, actual: window });
    }
    params.check_ids(ids)?;
    let offset = cfg.max_len - window;
    let key_valid: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
    let rate = T::of(cfg.dropout_rate as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let at = |slot: Slot| vars[ModelParams::<T>::index_of(&cfg, slot)];

    let mut outs = [None, None];
    let mut attention: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
    for (ti, tower) in Tower::BOTH.into_iter().enumerate() {
        let emb = tape.gather_rows(at(Slot::ItemTable(tower)), ids)?;
        let mut x = tape.add_positional(emb, at(Slot::Positional(tower)), offset, window)?;
        x = tape.dropout(x, rate, rng.as_deref_mut());
        for layer in 0..cfg.num_layers {
            let w = |b: BlockTensor| at(Slot::Block(tower, layer, b));
            let q = tape.matmul(x, w(BlockTensor::Query))?;
            let q = tape.elu(q);
            let k = tape.matmul(x, w(BlockTensor::Key))?;
            let k = tape.elu(k);
            let v = tape.matmul(x, w(BlockTensor::Value))?;
            let v = tape.elu(v);
            let a = tape.attention(q, k, v, window, &key_valid)?;
            attention[ti].push(a);
            let a = tape.dropout(a, rate, rng.as_deref_mut());
            let h = tape.add(a, x)?;
            x = tape.layer_norm(h, w(BlockTensor::Norm1Gain), w(BlockTensor::Norm1Bias), eps)?;

            let f = ffn_rows(tape, x, w(BlockTensor::Ffn1Weight), w(BlockTensor::Ffn1Bias), w(BlockTensor::Ffn2Weight), w(BlockTensor::Ffn2Bias))?;
            let f = tape.dropout(f, rate, rng.as_deref_mut());
            let h = tape.add(f, x)?;
            x = tape.layer_norm(h, w(BlockTensor::Norm2Gain), w(BlockTensor::Norm2Bias), eps)?;
        }
        outs[ti] = Some(x);
    }
    let mean = outs[0].expect("mean tower");
    let cov = tape.elu_plus_one(outs[1].expect("cov tower"));
    Ok(EncodedRows { mean, cov, attention })
}

/// `elu(elu(x·W1 + b1)·W2 + b2)` applied to every row.
pub fn ffn_rows<T: Real>(tape: &mut Tape<'_, T>, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var, NumericsError> {
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.elu(h);
    let o = tape.matmul(h, w2)?;
    let o = tape.add_bias(o, b2)?;
    Ok(tape.elu(o))
}

/// Full encoding of one sequence with its attention maps.
#[derive(Debug, Clone)]
pub struct Encoding<T = f32> {
    /// Position `t` holds the inferred distribution of the item at `t + 1`.
    pub outputs: Vec<GaussianParams<T>>,
    /// `[tower][layer]` attention matrices, `n × n`, row = query.
    pub attention: [Vec<Tensor<T>>; 2],
}

/// Encodes a single sequence of exactly `max_len` ids (use
/// [`pad_or_truncate`] first). Dropout is active only when `rng` is given.
pub fn encode_full<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    input_ids: &[u32],
    rng: Option<&mut R>,
) -> Result<Encoding<T>, ModelError> {
    let n = params.config.max_len;
    if input_ids.len() != n {
        return Err(ModelError::InputLength { expected: n, actual: input_ids.len() });
    }
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params);
    let enc = encode_rows(&mut tape, params, &vars, input_ids, n, rng)?;
    let (mean, cov) = (tape.value(enc.mean), tape.value(enc.cov));
    let outputs = (0..n)
        .map(|t| GaussianParams { mean: mean.row(t).to_vec(), cov_diag: cov.row(t).to_vec() })
        .collect();
    let grab = |vs: &[Var]| -> Vec<Tensor<T>> {
        vs.iter().map(|&v| tape.attention_weights(v).expect("attention node").clone()).collect()
    };
    let attention = [grab(&enc.attention[0]), grab(&enc.attention[1])];
    Ok(Encoding { outputs, attention })
}

/// Per-position next-item distributions for one padded sequence.
pub fn encode<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    input_ids: &[u32],
    rng: Option<&mut R>,
) -> Result<Vec<GaussianParams<T>>, ModelError> {
    encode_full(params, input_ids, rng).map(|e| e.outputs)
}

/// Mean and covariance sequence embeddings before any block: row `t` is
/// `E[id_t] + P[t]` for each tower.
pub fn embed_sequence<T: Real>(params: &ModelParams<T>, input_ids: &[u32]) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let n = params.config.max_len;
    if input_ids.len() != n {
        return Err(ModelError::InputLength { expected: n, actual: input_ids.len() });
    }
    params.check_ids(input_ids)?;
    let build = |tower: Tower| {
        let (table, pos) = (params.get(Slot::ItemTable(tower)), params.get(Slot::Positional(tower)));
        let mut out = Tensor::zeros(&[n, params.config.dim]);
        for (t, &id) in input_ids.iter().enumerate() {
            for ((o, &e), &p) in out.row_mut(t).iter_mut().zip(table.row(id as usize)).zip(pos.row(t)) {
                *o = e + p;
            }
        }
        out
    };
    Ok((build(Tower::Mean), build(Tower::Cov)))
}

/// Inferred next-item distribution after `context` (most recent `max_len`
/// items kept), in inference mode.
pub fn predict_next<T: Real>(params: &ModelParams<T>, context: &[u32]) -> Result<GaussianParams<T>, ModelError> {
    let n = params.config.max_len;
    let padded = pad_or_truncate(context, n);
    // an empty context still encodes its last (padding) position
    let window = (n - padded.iter().take_while(|&&i| i == PAD).count()).max(1);
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params);
    let enc = encode_rows::<T, crate::SeededRng>(&mut tape, params, &vars, &padded[n - window..], window, None)?;
    let last = window - 1;
    Ok(GaussianParams {
        mean: tape.value(enc.mean).row(last).to_vec(),
        cov_diag: tape.value(enc.cov).row(last).to_vec(),
    })
}

/// One distribution self-attention sublayer of `tower` at `layer` on an
/// `n × d` input: `softmax(elu(xWq) elu(xWk)ᵀ / √d) elu(xWv)` with causal
/// and key-padding masks.
pub fn dsa_forward<T: Real>(
    params: &ModelParams<T>,
    tower: Tower,
    x: &Tensor<T>,
    key_valid: &[bool],
    layer: usize,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params);
    let cfg = params.config;
    let w = |b| vars[ModelParams::<T>::index_of(&cfg, Slot::Block(tower, layer, b))];
    let xv = tape.constant(x.clone());
    let q = tape.matmul(xv, w(BlockTensor::Query))?;
    let q = tape.elu(q);
    let k = tape.matmul(xv, w(BlockTensor::Key))?;
    let k = tape.elu(k);
    let v = tape.matmul(xv, w(BlockTensor::Value))?;
    let v = tape.elu(v);
    let a = tape.attention(q, k, v, x.rows(), key_valid)?;
    let weights = tape.attention_weights(a).expect("attention node").clone();
    Ok((tape.value(a).clone(), weights))
}

/// Position-wise feed-forward sublayer of `tower` at `layer`.
pub fn ffn_forward<T: Real>(params: &ModelParams<T>, tower: Tower, x: &Tensor<T>, layer: usize) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params);
    let cfg = params.config;
    let w = |b| vars[ModelParams::<T>::index_of(&cfg, Slot::Block(tower, layer, b))];
    let xv = tape.constant(x.clone());
    let out = ffn_rows(&mut tape, xv, w(BlockTensor::Ffn1Weight), w(BlockTensor::Ffn1Bias), w(BlockTensor::Ffn2Weight), w(BlockTensor::Ffn2Bias))?;
    Ok(tape.value(out).clone())
}
