//! Reverse-mode gradient tape over the operator set the recommender needs.
//!
//! Every forward call evaluates eagerly and appends a node; [`Tape::backward`]
//! walks the nodes in reverse once.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

// f64 math under no_std
#[allow(unused_imports)]
use num_traits::Float;

use super::ops::{self, elu_grad_scalar, LayerNormCache};
use super::{NumericsError, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(usize),
    GatherRows { table: Var, ids: Vec<u32> },
    AddPositional { x: Var, pos: Var, offset: usize, window: usize },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    Elu(Var),
    EluPlusOne(Var),
    Dropout { x: Var, mask: Vec<T> },
    LayerNorm { x: Var, gain: Var, bias: Var, cache: LayerNormCache<T> },
    Attention { q: Var, k: Var, v: Var, window: usize, weights: Tensor<T> },
    Wasserstein { mean_a: Var, cov_a: Var, mean_b: Var, cov_b: Var },
    BprMean { pos: Var, neg: Var, valid: Vec<bool>, count: usize },
    SumSquares { x: Var, skip_rows: usize },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

/// Gradients with respect to registered parameters, keyed by parameter index.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    by_param: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, param: usize) -> Option<&Tensor<T>> {
        self.by_param.get(param).and_then(Option::as_ref)
    }

    pub fn into_vec(self) -> Vec<Option<Tensor<T>>> {
        self.by_param
    }
}

/// Records a single forward pass. Parameters are borrowed, not copied.
pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    consumed: bool,
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch { op, left: a.to_vec(), right: b.to_vec() }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0]
            .value
    }

    /// Attention weights recorded by an [`Tape::attention`] node.
    pub fn attention_weights(&self, v: Var) -> Option<&Tensor<T>> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf identified by `index`.
    pub fn param(&mut self, index: usize, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Param(index))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Constant)
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[u32]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            let id = id as usize;
            if id >= rows {
                return Err(NumericsError::IndexOutOfRange { index: id, len: rows });
            }
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), cols], out)?;
        Ok(self.push(Cow::Owned(value), Op::GatherRows { table, ids: ids.to_vec() }))
    }

    /// Adds `pos[offset + r % window]` to row `r` of `x`.
    pub fn add_positional(&mut self, x: Var, pos: Var, offset: usize, window: usize) -> Result<Var, NumericsError> {
        let (xv, pv) = (self.value(x), self.value(pos));
        if xv.cols() != pv.cols() || window == 0 || offset + window > pv.rows() || xv.rows() % window != 0 {
            return Err(mismatch("add_positional", xv.shape(), pv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let p = pv.row(offset + r % window);
            for (o, &pp) in out.row_mut(r).iter_mut().zip(p) {
                *o = *o + pp;
            }
        }
        Ok(self.push(Cow::Owned(out), Op::AddPositional { x, pos, offset, window }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b)))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NumericsError> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(mismatch("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o = *o + bb;
            }
        }
        Ok(self.push(Cow::Owned(out), Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b)))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(Cow::Owned(out), Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(Cow::Owned(out), Op::Scale(x, c))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let out = ops::elu(self.value(x));
        self.push(Cow::Owned(out), Op::Elu(x))
    }

    /// `elu(x) + 1`, strictly positive.
    pub fn elu_plus_one(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::elu_plus_one_scalar);
        self.push(Cow::Owned(out), Op::EluPlusOne(x))
    }

    /// Inverted dropout. `rng: None` (inference) or `rate == 0` is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: T, rng: Option<&mut R>) -> Var {
        let rng = match rng {
            Some(r) if rate > T::zero() => r,
            _ => return x,
        };
        let keep = T::one() - rate;
        let scale = T::one() / keep;
        let p = keep.f64();
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < p { scale } else { T::zero() })
            .collect();
        let mut out = xv.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o = *o * m;
        }
        self.push(Cow::Owned(out), Op::Dropout { x, mask })
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, NumericsError> {
        let (out, cache) = ops::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(Cow::Owned(out), Op::LayerNorm { x, gain, bias, cache }))
    }

    /// Single-head scaled dot-product attention over consecutive blocks of
    /// `window` rows. Row `i` of a block attends to rows `j <= i` of the same
    /// block whose `key_valid` flag is set.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, window: usize, key_valid: &[bool]) -> Result<Var, NumericsError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = (qv.rows(), qv.cols());
        if kv.shape() != qv.shape() || vv.rows() != rows || window == 0 || rows % window != 0 || key_valid.len() != rows {
            return Err(mismatch("attention", qv.shape(), kv.shape()));
        }
        let dv = vv.cols();
        let scale = T::one() / T::of(d as f64).sqrt();
        let mut weights = Tensor::zeros(&[rows, window]);
        let mut out = Tensor::zeros(&[rows, dv]);
        let mut scores = vec![T::zero(); window];
        let mut allowed = vec![false; window];
        for block in 0..rows / window {
            let base = block * window;
            for i in 0..window {
                let qi = qv.row(base + i);
                for j in 0..window {
                    allowed[j] = j <= i && key_valid[base + j];
                    scores[j] = if allowed[j] {
                        let kj = kv.row(base + j);
                        let mut s = T::zero();
                        for (&a, &b) in qi.iter().zip(kj) {
                            s = s + a * b;
                        }
                        s * scale
                    } else {
                        T::zero()
                    };
                }
                let wrow = weights.row_mut(base + i);
                ops::softmax_masked_into(&scores, &allowed, wrow);
                let wrow = weights.row(base + i);
                let orow = out.row_mut(base + i);
                for (j, &w) in wrow.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    for (o, &vj) in orow.iter_mut().zip(vv.row(base + j)) {
                        *o = *o + w * vj;
                    }
                }
            }
        }
        Ok(self.push(Cow::Owned(out), Op::Attention { q, k, v, window, weights }))
    }

    /// Row-wise squared 2-Wasserstein distance between diagonal Gaussians,
    /// `‖μa − μb‖² + ‖√σa − √σb‖²`. Output has one entry per row.
    pub fn wasserstein_rows(&mut self, mean_a: Var, cov_a: Var, mean_b: Var, cov_b: Var) -> Result<Var, NumericsError> {
        let (ma, ca, mb, cb) = (self.value(mean_a), self.value(cov_a), self.value(mean_b), self.value(cov_b));
        if ma.shape() != ca.shape() || ma.shape() != mb.shape() || ma.shape() != cb.shape() {
            return Err(mismatch("wasserstein_rows", ma.shape(), mb.shape()));
        }
        let mut out = Vec::with_capacity(ma.rows());
        for r in 0..ma.rows() {
            let mut acc = 0.0f64;
            for c in 0..ma.cols() {
                let dm = ma.row(r)[c].f64() - mb.row(r)[c].f64();
                let ds = ca.row(r)[c].f64().sqrt() - cb.row(r)[c].f64().sqrt();
                acc += dm * dm + ds * ds;
            }
            out.push(T::of(acc));
        }
        let value = Tensor::new(vec![out.len()], out)?;
        Ok(self.push(Cow::Owned(value), Op::Wasserstein { mean_a, cov_a, mean_b, cov_b }))
    }

    /// Mean over `valid` rows of `−log σ(neg − pos)`.
    pub fn bpr_mean(&mut self, pos: Var, neg: Var, valid: &[bool]) -> Result<Var, NumericsError> {
        let (pv, nv) = (self.value(pos), self.value(neg));
        if pv.len() != nv.len() || pv.len() != valid.len() {
            return Err(mismatch("bpr_mean", pv.shape(), nv.shape()));
        }
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(NumericsError::Empty("bpr_mean"));
        }
        let mut acc = 0.0f64;
        for ((&p, &n), &ok) in pv.data().iter().zip(nv.data()).zip(valid) {
            if ok {
                acc += softplus(p.f64() - n.f64());
            }
        }
        let value = Tensor::scalar(T::of(acc / count as f64));
        Ok(self.push(Cow::Owned(value), Op::BprMean { pos, neg, valid: valid.to_vec(), count }))
    }

    /// Sum of squares, skipping the first `skip_rows` rows.
    pub fn sum_squares(&mut self, x: Var, skip_rows: usize) -> Var {
        let xv = self.value(x);
        let start = (skip_rows * xv.cols()).min(xv.len());
        let acc: f64 = xv.data()[start..].iter().map(|v| v.f64() * v.f64()).sum();
        self.push(Cow::Owned(Tensor::scalar(T::of(acc))), Op::SumSquares { x, skip_rows })
    }

    /// Back-propagates from the scalar `loss`. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        if self.consumed {
            return Err(NumericsError::TapeConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(NumericsError::NotScalar(shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(&shape, T::one()));
        let mut by_param: Vec<Option<Tensor<T>>> = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(p) = node.op {
                if by_param.len() <= p {
                    by_param.resize_with(p + 1, || None);
                }
                let g = grads[idx].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match &mut by_param[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients { by_param })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| -> &Tensor<T> { &self.nodes[v.0].value };
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::GatherRows { table, ids } => {
                let tv = val(*table);
                let acc = slot(grads, *table, tv.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (a, &gg) in acc.row_mut(id as usize).iter_mut().zip(g.row(r)) {
                        *a = *a + gg;
                    }
                }
            }
            Op::AddPositional { x, pos, offset, window } => {
                accumulate(grads, *x, g);
                let pv = val(*pos);
                let acc = slot(grads, *pos, pv.shape());
                for r in 0..g.rows() {
                    for (a, &gg) in acc.row_mut(offset + r % window).iter_mut().zip(g.row(r)) {
                        *a = *a + gg;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let ga = slot(grads, *a, av.shape());
                ops::matmul_a_bt_acc(g.data(), bv.data(), ga.data_mut(), m, k, n);
                let gb = slot(grads, *b, bv.shape());
                ops::matmul_at_b_acc(av.data(), g.data(), gb.data_mut(), m, k, n);
            }
            Op::AddBias(x, b) => {
                accumulate(grads, *x, g);
                let bv = val(*b);
                let gb = slot(grads, *b, bv.shape());
                for r in 0..g.rows() {
                    for (a, &gg) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *a = *a + gg;
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::AddScalar(x) => accumulate(grads, *x, g),
            Op::Scale(x, c) => accumulate(grads, *x, &g.map(|v| v * *c)),
            Op::Elu(x) | Op::EluPlusOne(x) => {
                let xv = val(*x);
                let acc = slot(grads, *x, xv.shape());
                for ((a, &gg), &xx) in acc.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    *a = *a + gg * elu_grad_scalar(xx);
                }
            }
            Op::Dropout { x, mask } => {
                let xv = val(*x);
                let acc = slot(grads, *x, xv.shape());
                for ((a, &gg), &m) in acc.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *a = *a + gg * m;
                }
            }
            Op::LayerNorm { x, gain, bias, cache } => {
                let gv = val(*gain);
                let cols = g.cols();
                let mut dgain = vec![T::zero(); cols];
                let mut dbias = vec![T::zero(); cols];
                let mut dx = Tensor::zeros(g.shape());
                for r in 0..g.rows() {
                    let (gr, nr) = (g.row(r), cache.normalized.row(r));
                    let mut mean_dn = 0.0f64;
                    let mut mean_dn_n = 0.0f64;
                    for c in 0..cols {
                        dgain[c] = dgain[c] + gr[c] * nr[c];
                        dbias[c] = dbias[c] + gr[c];
                        let dn = (gr[c] * gv.data()[c]).f64();
                        mean_dn += dn;
                        mean_dn_n += dn * nr[c].f64();
                    }
                    mean_dn /= cols as f64;
                    mean_dn_n /= cols as f64;
                    let inv = cache.inv_std[r].f64();
                    let dxr = dx.row_mut(r);
                    for c in 0..cols {
                        let dn = (gr[c] * gv.data()[c]).f64();
                        dxr[c] = T::of(inv * (dn - mean_dn - nr[c].f64() * mean_dn_n));
                    }
                }
                accumulate(grads, *x, &dx);
                let shape = gv.shape().to_vec();
                accumulate(grads, *gain, &Tensor::new(shape.clone(), dgain).expect("gain shape"));
                accumulate(grads, *bias, &Tensor::new(shape, dbias).expect("bias shape"));
            }
            Op::Attention { q, k, v, window, weights } => {
                self.attention_backward(g, *q, *k, *v, *window, weights, grads);
            }
            Op::Wasserstein { mean_a, cov_a, mean_b, cov_b } => {
                let (ma, ca, mb, cb) = (val(*mean_a), val(*cov_a), val(*mean_b), val(*cov_b));
                let mut dma = Tensor::zeros(ma.shape());
                let mut dca = Tensor::zeros(ma.shape());
                let mut dmb = Tensor::zeros(ma.shape());
                let mut dcb = Tensor::zeros(ma.shape());
                for r in 0..ma.rows() {
                    let gr = g.data()[r];
                    for c in 0..ma.cols() {
                        let i = r * ma.cols() + c;
                        let dm = ma.data()[i] - mb.data()[i];
                        let (sa, sb) = (ca.data()[i].sqrt(), cb.data()[i].sqrt());
                        let two = T::of(2.0);
                        dma.data_mut()[i] = two * dm * gr;
                        dmb.data_mut()[i] = -two * dm * gr;
                        dca.data_mut()[i] = (sa - sb) / sa * gr;
                        dcb.data_mut()[i] = (sb - sa) / sb * gr;
                    }
                }
                accumulate(grads, *mean_a, &dma);
                accumulate(grads, *cov_a, &dca);
                accumulate(grads, *mean_b, &dmb);
                accumulate(grads, *cov_b, &dcb);
            }
            Op::BprMean { pos, neg, valid, count } => {
                let (pv, nv) = (val(*pos), val(*neg));
                let scale = g.data()[0].f64() / *count as f64;
                let mut dp = Tensor::zeros(pv.shape());
                let mut dn = Tensor::zeros(nv.shape());
                for (i, &ok) in valid.iter().enumerate() {
                    if ok {
                        let s = sigmoid(pv.data()[i].f64() - nv.data()[i].f64()) * scale;
                        dp.data_mut()[i] = T::of(s);
                        dn.data_mut()[i] = T::of(-s);
                    }
                }
                accumulate(grads, *pos, &dp);
                accumulate(grads, *neg, &dn);
            }
            Op::SumSquares { x, skip_rows } => {
                let xv = val(*x);
                let g0 = g.data()[0];
                let start = (skip_rows * xv.cols()).min(xv.len());
                let acc = slot(grads, *x, xv.shape());
                for (a, &xx) in acc.data_mut()[start..].iter_mut().zip(&xv.data()[start..]) {
                    *a = *a + T::of(2.0) * xx * g0;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &Tensor<T>,
        q: Var,
        k: Var,
        v: Var,
        window: usize,
        weights: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (qv, kv, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let d = qv.cols();
        let scale = T::one() / T::of(d as f64).sqrt();
        let mut dq = Tensor::zeros(qv.shape());
        let mut dk = Tensor::zeros(kv.shape());
        let mut dv = Tensor::zeros(vv.shape());
        let mut dw = vec![T::zero(); window];
        for block in 0..qv.rows() / window {
            let base = block * window;
            for i in 0..window {
                let wrow = weights.row(base + i);
                let gi = g.row(base + i);
                let mut dot = T::zero();
                for j in 0..window {
                    let w = wrow[j];
                    if w == T::zero() {
                        dw[j] = T::zero();
                        continue;
                    }
                    let vj = vv.row(base + j);
                    let mut s = T::zero();
                    for (&a, &b) in gi.iter().zip(vj) {
                        s = s + a * b;
                    }
                    dw[j] = s;
                    dot = dot + w * s;
                    for (o, &gg) in dv.row_mut(base + j).iter_mut().zip(gi) {
                        *o = *o + w * gg;
                    }
                }
                for j in 0..window {
                    let w = wrow[j];
                    if w == T::zero() {
                        continue;
                    }
                    let ds = w * (dw[j] - dot) * scale;
                    let (qi, kj) = (qv.row(base + i), kv.row(base + j));
                    for (o, &kk) in dq.row_mut(base + i).iter_mut().zip(kj) {
                        *o = *o + ds * kk;
                    }
                    for (o, &qq) in dk.row_mut(base + j).iter_mut().zip(qi) {
                        *o = *o + ds * qq;
                    }
                }
            }
        }
        accumulate(grads, q, &dq);
        accumulate(grads, k, &dk);
        accumulate(grads, v, &dv);
    }
}

fn slot<'g, T: Real>(grads: &'g mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'g mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: &Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(g),
        s => *s = Some(g.clone()),
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
