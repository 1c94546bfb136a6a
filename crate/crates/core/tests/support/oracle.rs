//! Dense-matrix reference for the Gaussian 2-Wasserstein distance:
//! `‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2 (Σ2^½ Σ1 Σ2^½)^½)`, with square roots
//! taken by Denman–Beavers iteration on full matrices.

#![allow(dead_code)]

pub type Matrix = Vec<Vec<f64>>;

pub fn diag(v: &[f64]) -> Matrix {
    let n = v.len();
    (0..n).map(|i| (0..n).map(|j| if i == j { v[i] } else { 0.0 }).collect()).collect()
}

pub fn identity(n: usize) -> Matrix {
    diag(&vec![1.0; n])
}

pub fn mul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let m = b[0].len();
    (0..n).map(|i| (0..m).map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

pub fn inverse(a: &Matrix) -> Matrix {
    let n = a.len();
    let mut aug: Matrix = a
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().copied().chain((0..n).map(|j| if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs())).unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        aug[col].iter_mut().for_each(|v| *v /= p);
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    let pivot_row = aug[col].clone();
                    aug[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
    }
    aug.into_iter().map(|row| row[n..].to_vec()).collect()
}

/// Principal square root of a symmetric positive-definite matrix.
pub fn sqrtm(a: &Matrix) -> Matrix {
    let n = a.len();
    let mut y = a.clone();
    let mut z = identity(n);
    for _ in 0..100 {
        let (yi, zi) = (inverse(&y), inverse(&z));
        let ny: Matrix = (0..n).map(|i| (0..n).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect()).collect();
        let nz: Matrix = (0..n).map(|i| (0..n).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect()).collect();
        let delta: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (ny[i][j] - y[i][j]).abs()).sum();
        y = ny;
        z = nz;
        if delta < 1e-15 {
            break;
        }
    }
    y
}

pub fn trace(a: &Matrix) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

pub fn wasserstein2_matrix(mu1: &[f64], s1: &Matrix, mu2: &[f64], s2: &Matrix) -> f64 {
    let mean: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let r2 = sqrtm(s2);
    let cross = sqrtm(&mul(&mul(&r2, s1), &r2));
    let n = s1.len();
    let inner: Matrix = (0..n).map(|i| (0..n).map(|j| s1[i][j] + s2[i][j] - 2.0 * cross[i][j]).collect()).collect();
    mean + trace(&inner)
}
