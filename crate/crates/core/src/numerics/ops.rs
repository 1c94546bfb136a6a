//! Forward kernels. The tape in [`super::tape`] records these and supplies
//! the matching backward rules.

use alloc::vec;
use alloc::vec::Vec;

// f64 math under no_std
#[allow(unused_imports)]
use num_traits::Float;

use super::{NumericsError, Real, Tensor};

#[inline]
pub fn elu_scalar<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1_libm()
    }
}

/// d elu / dx, written in terms of the input.
#[inline]
pub fn elu_grad_scalar<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        x.exp_libm()
    }
}

/// `elu(x) + 1`, evaluated as `exp(x)` on the negative branch so the result
/// stays positive where `elu(x)` would round to `-1`. Never below the
/// smallest positive normal value.
#[inline]
pub fn elu_plus_one_scalar<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + T::one()
    } else {
        x.exp_libm().max(T::min_positive_value())
    }
}

pub fn elu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(elu_scalar)
}

/// Row-wise softmax restricted to `allowed` entries.
///
/// Forbidden entries get exactly zero weight. A row with no allowed entry
/// comes out as all zeros.
pub fn softmax_rows<T: Real>(m: &Tensor<T>, allowed: &[bool]) -> Result<Tensor<T>, NumericsError> {
    if m.shape().len() != 2 || allowed.len() != m.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "softmax_rows",
            left: m.shape().to_vec(),
            right: vec![allowed.len()],
        });
    }
    let cols = m.cols();
    let mut out = Tensor::zeros(m.shape());
    for r in 0..m.rows() {
        let mask = &allowed[r * cols..(r + 1) * cols];
        softmax_masked_into(m.row(r), mask, out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_masked_into<T: Real>(scores: &[T], allowed: &[bool], out: &mut [T]) {
    let mut max = T::neg_infinity();
    for (&s, &ok) in scores.iter().zip(allowed) {
        if ok && s > max {
            max = s;
        }
    }
    if max == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    let mut sum = 0.0f64;
    for ((o, &s), &ok) in out.iter_mut().zip(scores).zip(allowed) {
        if ok {
            *o = (s - max).exp_libm();
            sum += o.f64();
        } else {
            *o = T::zero();
        }
    }
    let inv = T::of(1.0 / sum);
    out.iter_mut().for_each(|o| *o = *o * inv);
}

fn matrix_dims<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, k) = matrix_dims(a);
    let (k2, n) = matrix_dims(b);
    if k != k2 || b.shape().len() != 2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    matmul_into(a.data(), b.data(), out.data_mut(), m, k, n);
    Ok(out)
}

pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            for (o, &bpj) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + aip * bpj;
            }
        }
    }
}

/// `aᵀ · g` accumulated into `out` (`a: m×k`, `g: m×n`, `out: k×n`).
pub(crate) fn matmul_at_b_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            for (o, &gij) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o = *o + aip * gij;
            }
        }
    }
}

/// `g · bᵀ` accumulated into `out` (`g: m×n`, `b: k×n`, `out: m×k`).
pub(crate) fn matmul_a_bt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                s = s + x * y;
            }
            out[i * k + p] = out[i * k + p] + s;
        }
    }
}

/// Per-row statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Layer normalization over the last axis.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>), NumericsError> {
    let cols = x.cols();
    if gain.len() != cols || bias.len() != cols {
        return Err(NumericsError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(x.shape());
    let mut normalized = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().map(|v| v.f64()).sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v.f64() - mean) * (v.f64() - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + eps.f64()).sqrt();
        inv_std.push(T::of(inv));
        let nrow = normalized.row_mut(r);
        for (n, &v) in nrow.iter_mut().zip(row) {
            *n = T::of((v.f64() - mean) * inv);
        }
        let (nrow, orow) = (normalized.row(r), out.row_mut(r));
        for c in 0..cols {
            orow[c] = gain.data()[c] * nrow[c] + bias.data()[c];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}
