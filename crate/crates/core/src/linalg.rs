//! Small helpers over flat, agent-major stacked vectors.
//!
//! A stacked vector of `n` agents with block size `m` stores agent `i` at
//! `i * m .. (i + 1) * m`.

use nalgebra::{DMatrix, DVector};

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Block mean `(1/n) Σ_i v_i`.
pub fn block_mean(v: &[f64], m: usize) -> Vec<f64> {
    let n = v.len() / m;
    let mut mean = vec![0.0; m];
    for block in v.chunks_exact(m) {
        for (acc, a) in mean.iter_mut().zip(block) {
            *acc += a;
        }
    }
    for a in &mut mean {
        *a /= n as f64;
    }
    mean
}

/// `‖v − 1_n ⊗ v̄‖`.
pub fn consensus_violation(v: &[f64], m: usize) -> f64 {
    let mean = block_mean(v, m);
    v.chunks_exact(m)
        .flat_map(|block| block.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>()
        .sqrt()
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym(a).symmetric_eigenvalues().min()
}

/// `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
