//! Library routines against independent closed forms and dense-algebra oracles.

#![allow(clippy::needless_range_loop)]

mod common;

use approx::assert_relative_eq;
use mfglab::learn::{shifted_legendre, target_coefficients, OutputBasisSpec};
use mfglab::mfg_solver::{solve_equilibrium, ConsistencyOptions, Quadrature};
use mfglab::model::MfgModel;
use mfglab::operator_core::{mat_exp, op_norm, spectral_norm, tensor_op_norm, Matrix, Tensor3, DEFAULT_POWER_ITERS};
use mfglab::riccati::{solve_riccati, TimeGrid};
use mfglab::rno::lambert_w0;
use mfglab::sampling::{min_cost_assignment, tempered_sigma_at};
use nalgebra::DMatrix;

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn pade_exponential_matches_nalgebra() {
    let mut r = common::rng(1);
    for n in 1..6 {
        for scale in [0.1, 1.0, 8.0] {
            let a = common::uniform_matrix(&mut r, n, n, scale);
            let ours = to_na(&mat_exp(&a, 0.7).unwrap());
            let theirs = (to_na(&a) * 0.7).exp();
            let err = (&ours - &theirs).abs().max() / theirs.abs().max().max(1.0);
            assert!(err < 1e-12, "n={n} scale={scale} err={err:e}");
        }
    }
}

#[test]
fn symmetric_eigensystem_reconstructs() {
    let mut r = common::rng(2);
    for n in 1..7 {
        let s = common::psd(&mut r, n, 1.0).axpy(-0.3, &Matrix::identity(n));
        let (vals, vecs) = s.sym_eig();
        let rec = vecs.matmul(&Matrix::diag(&vals)).matmul(&vecs.transpose());
        let mut ref_vals: Vec<f64> = to_na(&s).symmetric_eigen().eigenvalues.iter().copied().collect();
        let mut ours = vals.clone();
        ref_vals.sort_by(f64::total_cmp);
        ours.sort_by(f64::total_cmp);
        for (a, b) in ours.iter().zip(&ref_vals) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert!((&rec - &s).max_abs() < 1e-12);
    }
}

#[test]
fn operator_norms_match_singular_values() {
    let mut r = common::rng(3);
    for (m, n) in [(1, 1), (2, 3), (4, 2), (5, 5)] {
        let a = common::uniform_matrix(&mut r, m, n, 1.0);
        let sv = to_na(&a).singular_values().max();
        assert_relative_eq!(spectral_norm(&a), sv, max_relative = 1e-10);
        assert_relative_eq!(op_norm(&a, DEFAULT_POWER_ITERS).value, sv, max_relative = 1e-8);
    }
}

#[test]
fn tensor_norm_of_single_slice_is_its_spectral_norm() {
    let mut r = common::rng(4);
    let a = common::uniform_matrix(&mut r, 3, 2, 1.0);
    let t = Tensor3::from_single_slice(&a);
    assert_relative_eq!(tensor_op_norm(&t), to_na(&a).singular_values().max(), max_relative = 1e-8);
}

#[test]
fn linear_solve_matches_nalgebra() {
    let mut r = common::rng(5);
    let a = common::uniform_matrix(&mut r, 4, 4, 1.0).axpy(3.0, &Matrix::identity(4));
    let b = common::uniform_matrix(&mut r, 4, 2, 1.0);
    let ours = to_na(&a.solve(&b).unwrap());
    let theirs = to_na(&a).lu().solve(&to_na(&b)).unwrap();
    assert!((ours - theirs).abs().max() < 1e-12);
}

/// With `D = E = 0`, `Pi = Y X^{-1}` where `(X, Y)` solve the linear
/// Hamiltonian system `X' = -A X + B B^T Y`, `Y' = M X + A^T Y`.
#[test]
fn riccati_matches_hamiltonian_linearisation() {
    for seed in 0..8u64 {
        let mut model = common::random_model(100 + seed, 3, 2, 2);
        model.d_op = Tensor3::zeros(3, 3, 2);
        model.e_op = Tensor3::zeros(3, 2, 2);
        let grid = TimeGrid::new(model.horizon, 2000).unwrap();
        let ric = solve_riccati(&model, &grid).unwrap();
        let (a, b, m, g) = (to_na(&model.a), to_na(&model.b), to_na(&model.m_cost), to_na(&model.g_cost));
        let mut ham = DMatrix::zeros(6, 6);
        ham.view_mut((0, 0), (3, 3)).copy_from(&(-&a));
        ham.view_mut((0, 3), (3, 3)).copy_from(&(&b * b.transpose()));
        ham.view_mut((3, 0), (3, 3)).copy_from(&m);
        ham.view_mut((3, 3), (3, 3)).copy_from(&a.transpose());
        let mut start = DMatrix::zeros(6, 3);
        start.view_mut((0, 0), (3, 3)).copy_from(&DMatrix::identity(3, 3));
        start.view_mut((3, 0), (3, 3)).copy_from(&g);
        for i in (0..grid.len()).step_by(100) {
            let xy = (&ham * grid.time(i)).exp() * &start;
            let x = xy.view((0, 0), (3, 3)).into_owned();
            let y = xy.view((3, 0), (3, 3)).into_owned();
            let pi = y * x.try_inverse().unwrap();
            let err = (to_na(&ric.pi[i]) - &pi).abs().max();
            assert!(err < 1e-9, "seed {seed} step {i}: {err:e}");
        }
    }
}

/// Scalar `pi' = -2 a pi - pi^2 + m`, `pi(0) = g`, in closed form.
#[test]
fn scalar_riccati_matches_two_exponential_form() {
    let (a, m, g) = (1.0f64, 0.75, 0.5);
    let model = MfgModel::scalar_example(&Default::default());
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let ric = solve_riccati(&model, &grid).unwrap();
    let s = (a * a + m).sqrt();
    let (r1, r2) = (-a + s, -a - s);
    let c1 = (g - r2) / (r1 - r2);
    let c2 = 1.0 - c1;
    for i in 0..grid.len() {
        let t = grid.time(i);
        let e1 = c1 * (r1 * t).exp();
        let e2 = c2 * (r2 * t).exp();
        let closed = (r1 * e1 + r2 * e2) / (e1 + e2);
        assert!((ric.pi[i].get(0, 0) - closed).abs() < 1e-10, "t={t}");
    }
}

/// Without costs the control vanishes and the mean follows `exp((A + F1) t) xi`.
#[test]
fn costless_mean_field_is_a_linear_flow() {
    for quadrature in [Quadrature::Trapezoid, Quadrature::Cubic] {
        let mut model = common::random_model(40, 3, 2, 2);
        model.m_cost = Matrix::zeros(3, 3);
        model.g_cost = Matrix::zeros(3, 3);
        let opts = ConsistencyOptions { quadrature, ..ConsistencyOptions::default() };
        let eq = solve_equilibrium(&model, 2000, &opts).unwrap();
        let flow = to_na(&(&model.a + &model.f1));
        let xi = nalgebra::DVector::from_column_slice(&model.xi_mean);
        for i in (0..eq.grid.len()).step_by(250) {
            let want = (&flow * eq.grid.time(i)).exp() * &xi;
            let got = nalgebra::DVector::from_column_slice(&eq.xbar[i]);
            assert!((got - want).amax() < 1e-6, "{quadrature:?} step {i}");
            assert!(eq.ubar[i].iter().all(|u| u.abs() < 1e-12));
        }
    }
}

#[test]
fn legendre_basis_is_orthonormal() {
    let horizon = 1.7;
    let n = 6;
    // composite Simpson; its error on these degree <= 10 products is about 1e-10
    let k = 2000;
    let h = horizon / k as f64;
    let mut gram = vec![vec![0.0; n]; n];
    for s in 0..=k {
        let w = if s == 0 || s == k { 1.0 } else if s % 2 == 1 { 4.0 } else { 2.0 };
        let p = shifted_legendre(n, horizon, s as f64 * h);
        for i in 0..n {
            for j in 0..n {
                gram[i][j] += w * h / 3.0 * p[i] * p[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let dev = (gram[i][j] - if i == j { 1.0 } else { 0.0 }).abs();
            assert!(dev < 1e-8, "({i},{j}) {dev:e}");
        }
    }
}

#[test]
fn linear_control_has_two_legendre_coefficients() {
    let horizon = 2.0;
    let steps = 4000;
    let ubar: Vec<Vec<f64>> = (0..=steps).map(|i| vec![3.0 - 0.5 * horizon * i as f64 / steps as f64]).collect();
    let basis = OutputBasisSpec { n_time: 4, d_u: 1, horizon };
    let beta = target_coefficients(&ubar, &basis).unwrap();
    // u(t) = 3 - t/2 = 2.5 - 0.5 (t - 1) on [0, 2]
    assert_relative_eq!(beta[0], 2.5 * horizon.sqrt(), max_relative = 1e-8);
    // psi_1 = sqrt(3/T) x with x = 2t/T - 1; trapezoid error is O(h^2)
    assert_relative_eq!(beta[1], -0.5 * (3.0 / horizon).sqrt() * (horizon / 2.0) * (2.0 / 3.0), max_relative = 1e-6);
    assert!(beta[2].abs() < 1e-6 && beta[3].abs() < 1e-6);
}

#[test]
fn assignment_matches_brute_force() {
    let mut r = common::rng(6);
    for n in 1..=7 {
        let cost: Vec<f64> = (0..n * n).map(|_| rand::Rng::gen_range(&mut r, 0.0..1.0)).collect();
        let assign = min_cost_assignment(n, &cost).unwrap();
        let value: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        heap_permutations(n, &mut perm, &mut |p| {
            best = best.min(p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum());
        });
        assert!((value - best).abs() < 1e-12, "n={n}");
    }
}

fn heap_permutations(k: usize, p: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(p);
        return;
    }
    for i in 0..k {
        heap_permutations(k - 1, p, visit);
        let j = if k.is_multiple_of(2) { i } else { 0 };
        p.swap(j, k - 1);
    }
}

#[test]
fn lambert_w_matches_known_values() {
    assert_relative_eq!(lambert_w0(1.0).unwrap(), 0.567_143_290_409_783_8, max_relative = 1e-15);
    assert_relative_eq!(lambert_w0(std::f64::consts::E).unwrap(), 1.0, max_relative = 1e-15);
    assert_relative_eq!(lambert_w0(-(-1.0f64).exp()).unwrap(), -1.0, epsilon = 1e-7);
    assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
    assert!(lambert_w0(-0.5).is_err());
}

#[test]
fn tempered_sigmas_decrease_and_saturate_at_full_confidence() {
    let s: Vec<f64> = (1..20).map(|i| tempered_sigma_at(0.1, 1.0, i).unwrap()).collect();
    assert!(s.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    // at delta_x = 1 the log term vanishes and only the exponential is left
    assert_relative_eq!(tempered_sigma_at(1.0, 0.5, 3).unwrap(), (-1.5f64).exp() / 2f64.ln().sqrt(), max_relative = 1e-15);
}
