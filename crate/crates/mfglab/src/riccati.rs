//! Operator differential Riccati equation and the feedback gains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeltaKind, MfgModel, RieszOps};
use crate::operator_core::{semigroup_bound, spectral_norm, Matrix, DEFAULT_SEMIGROUP_GRID};
use crate::scalar::Scalar;

/// Default number of integration steps.
pub const DEFAULT_STEPS: usize = 1000;

/// Eigenvalues below `-PSD_TOL` trigger a clip to zero.
pub const PSD_TOL: f64 = 1e-8;

/// Uniform grid `t_i = i T / n` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct TimeGrid<S: Scalar> {
    pub horizon: S,
    pub steps: usize,
}

impl<S: Scalar> TimeGrid<S> {
    pub fn new(horizon: S, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Invalid(format!("time grid needs at least 2 steps, got {steps}")));
        }
        if !(horizon > S::zero()) || !horizon.is_finite() {
            return Err(Error::Invalid("time grid horizon must be positive".into()));
        }
        Ok(Self { horizon, steps })
    }

    /// Step size `T / n`.
    pub fn dt(&self) -> S {
        self.horizon / S::of_usize(self.steps)
    }

    /// `t_i`.
    pub fn time(&self, i: usize) -> S {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * S::of_usize(i) / S::of_usize(self.steps)
        }
    }

    /// All `n + 1` grid times.
    pub fn times(&self) -> Vec<S> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `Pi`, `K` and `L` on the grid, in the Riccati equation's own time.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution<S: Scalar> {
    pub grid: TimeGrid<S>,
    pub pi: Vec<Matrix<S>>,
    pub k_ops: Vec<Matrix<S>>,
    pub l_ops: Vec<Matrix<S>>,
    /// Number of steps at which a negative eigenvalue was clipped.
    pub psd_clips: usize,
}

impl<S: Scalar> RiccatiSolution<S> {
    /// `sup_i ||Pi(t_i)||`.
    pub fn sup_op_norm(&self) -> S {
        self.pi.iter().map(spectral_norm).fold(S::zero(), S::max)
    }

    /// `sup_i ||Pi(t_i)||_HS`.
    pub fn sup_hs_norm(&self) -> S {
        self.pi.iter().map(crate::operator_core::hs_norm).fold(S::zero(), S::max)
    }

    /// `K(t_i)^{-1} L(t_i)` for every grid index.
    pub fn gains(&self) -> Result<Vec<Matrix<S>>> {
        self.k_ops
            .iter()
            .zip(&self.l_ops)
            .enumerate()
            .map(|(i, (k, l))| k.solve(l).map_err(|_| Error::Singular { step: Some(i) }))
            .collect()
    }
}

struct RiccatiRhs<'a, S: Scalar> {
    model: &'a MfgModel<S>,
    riesz: RieszOps<S>,
    id_u: Matrix<S>,
}

impl<S: Scalar> RiccatiRhs<'_, S> {
    fn gains(&self, pi: &Matrix<S>) -> Result<(Matrix<S>, Matrix<S>)> {
        let k = &self.id_u + &self.riesz.delta(pi, DeltaKind::Three)?;
        let l = &self.model.b.tr_matmul(pi) + &self.riesz.delta(pi, DeltaKind::One)?;
        Ok((k, l))
    }

    fn eval(&self, pi: &Matrix<S>, step: usize) -> Result<Matrix<S>> {
        let (k, l) = self.gains(pi)?;
        let kinv_l = k.solve(&l).map_err(|_| Error::Singular { step: Some(step) })?;
        let a = &self.model.a;
        let mut out = a.tr_matmul(pi);
        out.axpy_inplace(S::one(), &pi.matmul(a));
        out.axpy_inplace(-S::one(), &l.tr_matmul(&kinv_l));
        out.axpy_inplace(S::one(), &self.riesz.delta(pi, DeltaKind::Two)?);
        out.axpy_inplace(S::one(), &self.model.m_cost);
        Ok(out)
    }
}

/// Clips eigenvalues below `-PSD_TOL` to zero; returns whether a clip happened.
fn clip_psd<S: Scalar>(pi: &mut Matrix<S>) -> bool {
    let (vals, vecs) = pi.sym_eig();
    if vals.first().is_none_or(|&v| v >= -S::of(PSD_TOL)) {
        return false;
    }
    let clipped: Vec<S> = vals.iter().map(|&v| if v < -S::of(PSD_TOL) { S::zero() } else { v }).collect();
    *pi = vecs.matmul(&Matrix::diag(&clipped)).matmul(&vecs.transpose()).symmetrize();
    true
}

/// Integrates `Pi' = A^T Pi + Pi A - L^T K^{-1} L + Delta_2(Pi) + M`,
/// `Pi(0) = G`, with classical RK4 on `grid`.
pub fn solve_riccati<S: Scalar>(model: &MfgModel<S>, grid: &TimeGrid<S>) -> Result<RiccatiSolution<S>> {
    model.validate()?;
    let grid = TimeGrid::new(grid.horizon, grid.steps)?;
    let rhs = RiccatiRhs { model, riesz: model.riesz(), id_u: Matrix::identity(model.dim_u()) };
    let h = grid.dt();
    let half = S::of(0.5);
    let sixth = S::one() / S::of(6.0);
    let mut pi = Vec::with_capacity(grid.len());
    let mut k_ops = Vec::with_capacity(grid.len());
    let mut l_ops = Vec::with_capacity(grid.len());
    let mut psd_clips = 0;
    let mut cur = model.g_cost.clone();
    for step in 0..=grid.steps {
        let (k, l) = rhs.gains(&cur)?;
        pi.push(cur.clone());
        k_ops.push(k);
        l_ops.push(l);
        if step == grid.steps {
            break;
        }
        let k1 = rhs.eval(&cur, step)?.symmetrize();
        let k2 = rhs.eval(&cur.axpy(half * h, &k1).symmetrize(), step)?.symmetrize();
        let k3 = rhs.eval(&cur.axpy(half * h, &k2).symmetrize(), step)?.symmetrize();
        let k4 = rhs.eval(&cur.axpy(h, &k3).symmetrize(), step)?.symmetrize();
        let mut incr = k1;
        incr.axpy_inplace(S::of(2.0), &k2);
        incr.axpy_inplace(S::of(2.0), &k3);
        incr.axpy_inplace(S::one(), &k4);
        let mut next = cur.axpy(h * sixth, &incr).symmetrize();
        if !next.is_finite() {
            return Err(Error::NonFinite { step: step + 1 });
        }
        if clip_psd(&mut next) {
            psd_clips += 1;
            log::debug!("clipped negative eigenvalue of Pi at step {}", step + 1);
        }
        cur = next;
    }
    Ok(RiccatiSolution { grid, pi, k_ops, l_ops, psd_clips })
}

/// `2 M_T^2 exp(8 T M_T^2 ||D||^2 tr Q) (||G|| + T ||M||)`.
pub fn pi_uniform_bound_from<S: Scalar>(m_t: S, horizon: S, norm_d: S, tr_q: S, norm_g: S, norm_m: S) -> S {
    let two = S::of(2.0);
    let eight = S::of(8.0);
    two * m_t * m_t * (eight * horizon * m_t * m_t * norm_d * norm_d * tr_q).exp() * (norm_g + horizon * norm_m)
}

/// Uniform bound on `||Pi(t)||` with `M_T` from [`semigroup_bound`].
pub fn pi_uniform_bound<S: Scalar>(model: &MfgModel<S>) -> Result<S> {
    let m_t = semigroup_bound(&model.a, model.horizon, DEFAULT_SEMIGROUP_GRID)?;
    Ok(pi_uniform_bound_from(
        m_t,
        model.horizon,
        model.norm_d(),
        model.q_cov.trace(),
        spectral_norm(&model.g_cost),
        spectral_norm(&model.m_cost),
    ))
}
