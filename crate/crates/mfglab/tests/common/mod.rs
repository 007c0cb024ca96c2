//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod oracle;

use mfglab::model::{MfgModel, RulePerturbation};
use mfglab::operator_core::{CovarianceSpec, Matrix, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-dimensional state, scalar control and noise; used by the learning tests.
pub fn desk_model() -> MfgModel<f64> {
    let mut m = MfgModel::zeros(2, 1, 1);
    m.a = Matrix::from_rows(&[vec![-1.0, 0.2], vec![0.0, -0.5]]).unwrap();
    m.b = Matrix::from_rows(&[vec![1.0], vec![0.5]]).unwrap();
    m.d_op = Tensor3::from_fn(2, 2, 1, |i, j, _| if i == j { 0.05 } else { 0.0 });
    m.e_op = Tensor3::from_fn(2, 1, 1, |i, _, _| if i == 0 { 0.05 } else { 0.0 });
    m.f1 = Matrix::scaled_identity(2, 0.5);
    m.f2 = Tensor3::from_fn(2, 2, 1, |i, j, _| if i == j { 0.1 } else { 0.0 });
    m.sigma = Matrix::from_rows(&[vec![0.2], vec![0.1]]).unwrap();
    m.m_cost = Matrix::scaled_identity(2, 0.75);
    m.g_cost = Matrix::scaled_identity(2, 0.5);
    m.f1_hat = Matrix::scaled_identity(2, 0.5);
    m.f2_hat = Matrix::scaled_identity(2, 0.5);
    m.q_cov = CovarianceSpec::diagonal(vec![1.0]);
    m.horizon = 1.0;
    m.xi_mean = vec![1.0, -0.5];
    m
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, s: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| r.gen_range(-s..s))
}

pub fn uniform_tensor(r: &mut ChaCha8Rng, o: usize, i: usize, k: usize, s: f64) -> Tensor3<f64> {
    Tensor3::from_fn(o, i, k, |_, _, _| r.gen_range(-s..s))
}

/// Symmetric positive semidefinite `X X^T` with entries of `X` in `[-s, s]`.
pub fn psd(r: &mut ChaCha8Rng, n: usize, s: f64) -> Matrix<f64> {
    let x = uniform_matrix(r, n, n, s);
    x.matmul(&x.transpose())
}

/// Random orthonormal `n x n` matrix from Gram-Schmidt.
pub fn orthonormal(r: &mut ChaCha8Rng, n: usize) -> Matrix<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nv > 1e-3 {
            cols.push(v.into_iter().map(|a| a / nv).collect());
        }
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Random small model with a non-diagonal noise covariance.
pub fn random_model(seed: u64, h: usize, u: usize, v: usize) -> MfgModel<f64> {
    let mut r = rng(seed);
    let mut m = MfgModel::zeros(h, u, v);
    m.a = uniform_matrix(&mut r, h, h, 1.0);
    m.b = uniform_matrix(&mut r, h, u, 1.0);
    m.d_op = uniform_tensor(&mut r, h, h, v, 0.2);
    m.e_op = uniform_tensor(&mut r, h, u, v, 0.2);
    m.f1 = uniform_matrix(&mut r, h, h, 0.5);
    m.f2 = uniform_tensor(&mut r, h, h, v, 0.3);
    m.sigma = uniform_matrix(&mut r, h, v, 0.3);
    m.m_cost = psd(&mut r, h, 0.7);
    m.g_cost = psd(&mut r, h, 0.5);
    m.f1_hat = uniform_matrix(&mut r, h, h, 0.5);
    m.f2_hat = uniform_matrix(&mut r, h, h, 0.5);
    let mut q: Vec<f64> = (0..v).map(|_| r.gen_range(0.1..1.0)).collect();
    q.sort_by(|a, b| b.partial_cmp(a).unwrap());
    m.q_cov = CovarianceSpec { dim_v: v, eigenvalues: q, eigenvectors: orthonormal(&mut r, v) };
    m.horizon = r.gen_range(0.2..1.5);
    m.xi_mean = (0..h).map(|_| r.gen_range(-1.0..1.0)).collect();
    m.xi_cov = psd(&mut r, h, 0.3);
    m
}

/// Random direction supported on one family.
pub fn random_direction(seed: u64, h: usize, u: usize, v: usize, family: mfglab::model::Family) -> RulePerturbation<f64> {
    use mfglab::model::Family;
    let mut r = rng(seed ^ 0xd1);
    let mut p = RulePerturbation::zeros(h, u, v);
    match family {
        Family::A => p.delta_a = uniform_matrix(&mut r, h, h, 1.0),
        Family::B => p.delta_b = uniform_matrix(&mut r, h, u, 1.0),
        Family::F2 => p.delta_f2 = uniform_tensor(&mut r, h, h, v, 1.0),
    }
    p
}

/// Relative difference `|a - b| / max(1, |a|, |b|)`.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}
