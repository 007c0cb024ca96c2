//! Mean-field consistency system, equilibrium strategy and Monte-Carlo paths.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::{GammaKind, MfgModel, RieszOps};
use crate::noise::KeyedNormals;
use crate::operator_core::{mat_exp, Matrix};
use crate::riccati::{solve_riccati, RiccatiSolution, TimeGrid};
use crate::scalar::{axpy, norm2, sub_vec, Scalar};
use crate::stability::contraction_check;

/// Default Picard damping.
pub const DEFAULT_DAMPING: f64 = 0.5;
/// Default sup-norm tolerance of the fixed-point iteration.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 500;

/// Interpolation order of the exponential-integrator quadrature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Piecewise-linear interpolation of the integrand.
    Trapezoid,
    /// Four-point Lagrange interpolation of the integrand.
    #[default]
    Cubic,
}

/// Fixed-point iteration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub quadrature: Quadrature,
}

impl Default for ConsistencyOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, damping: DEFAULT_DAMPING, quadrature: Quadrature::Cubic }
    }
}

/// Solved equilibrium on a grid.
///
/// `q[j]` is the offset in its own (time-to-go) variable at `t_j`; `xbar[i]`
/// and `ubar[i]` are in forward time.
#[derive(Clone, Debug)]
pub struct EquilibriumSolution<S: Scalar> {
    pub grid: TimeGrid<S>,
    pub riccati: RiccatiSolution<S>,
    pub q: Vec<Vec<S>>,
    pub xbar: Vec<Vec<S>>,
    pub ubar: Vec<Vec<S>>,
    pub fixed_point_residual: S,
    pub iterations: usize,
    pub residual_history: Vec<S>,
    /// `K(T - t_i)^{-1} L(T - t_i)` in forward time.
    pub gain: Vec<Matrix<S>>,
    /// `K(T - t_i)^{-1} [Gamma_2(...) + B^T q(T - t_i)]` in forward time.
    pub offset: Vec<Vec<S>>,
}

impl<S: Scalar> EquilibriumSolution<S> {
    /// Feedback control `-gain_i x - offset_i`.
    pub fn control(&self, i: usize, x: &[S]) -> Vec<S> {
        let mut u = self.gain[i].matvec(x);
        for (uj, oj) in u.iter_mut().zip(&self.offset[i]) {
            *uj = -(*uj + *oj);
        }
        u
    }

    /// `sup_i ||xbar(t_i)||`.
    pub fn xbar_sup(&self) -> S {
        self.xbar.iter().map(|v| norm2(v)).fold(S::zero(), S::max)
    }
}

/// Per-step matrices of the exponential integrator for one generator.
struct ExpIntegrator<S: Scalar> {
    step: Matrix<S>,
    /// Node weights per stencil kind: interior, first interval, last interval.
    weights: [Vec<Matrix<S>>; 3],
    offsets: [Vec<isize>; 3],
    quad: Quadrature,
}

impl<S: Scalar> ExpIntegrator<S> {
    fn new(a: &Matrix<S>, h: S, quad: Quadrature) -> Result<Self> {
        let d = a.rows();
        let np = match quad {
            Quadrature::Trapezoid => 2,
            Quadrature::Cubic => 4,
        };
        // exp of [[hA, I, 0..], [0, 0, I, ..], ..] carries phi_1..phi_np(hA) in its top block row.
        let big = d * (np + 1);
        let mut z = Matrix::zeros(big, big);
        for i in 0..d {
            for j in 0..d {
                z.set(i, j, a.get(i, j) * h);
            }
        }
        for blk in 0..np {
            for i in 0..d {
                z.set(blk * d + i, (blk + 1) * d + i, S::one());
            }
        }
        let ez = mat_exp(&z, S::one())?;
        let block = |b: usize| Matrix::from_fn(d, d, |i, j| ez.get(i, b * d + j));
        let step = block(0);
        // W_p = h p! phi_{p+1}(hA) integrates theta^p against exp((1 - theta) h A).
        let mut fact = S::one();
        let mut w = Vec::with_capacity(np);
        for p in 0..np {
            if p > 0 {
                fact *= S::of_usize(p);
            }
            w.push(block(p + 1).scale(h * fact));
        }
        let offsets: [Vec<isize>; 3] = match quad {
            Quadrature::Trapezoid => [vec![0, 1], vec![0, 1], vec![0, 1]],
            Quadrature::Cubic => [vec![-1, 0, 1, 2], vec![0, 1, 2, 3], vec![-2, -1, 0, 1]],
        };
        let weights = [0, 1, 2].map(|kind| {
            let nodes: Vec<S> = offsets[kind].iter().map(|&o| S::of(o as f64)).collect();
            let coeffs = lagrange_monomials(&nodes);
            coeffs
                .iter()
                .map(|beta| {
                    let mut m = Matrix::zeros(d, d);
                    for (bp, wp) in beta.iter().zip(&w) {
                        m.axpy_inplace(*bp, wp);
                    }
                    m
                })
                .collect()
        });
        Ok(Self { step, weights, offsets, quad })
    }

    /// `out[i] = exp(t_i A) init + sign * int_0^{t_i} exp((t_i - r) A) f(r) dr`.
    fn propagate(&self, init: &[S], f: &[Vec<S>], sign: S) -> Vec<Vec<S>> {
        let n = f.len() - 1;
        let mut out = Vec::with_capacity(n + 1);
        out.push(init.to_vec());
        for m in 0..n {
            let kind = match self.quad {
                Quadrature::Trapezoid => 0,
                Quadrature::Cubic if m == 0 => 1,
                Quadrature::Cubic if m == n - 1 => 2,
                Quadrature::Cubic => 0,
            };
            let mut next = self.step.matvec(&out[m]);
            for (o, wmat) in self.offsets[kind].iter().zip(&self.weights[kind]) {
                let idx = (m as isize + o).clamp(0, n as isize) as usize;
                let contrib = wmat.matvec(&f[idx]);
                axpy(sign, &contrib, &mut next);
            }
            out.push(next);
        }
        out
    }
}

/// Monomial coefficients of the Lagrange basis on `nodes`: `out[s][p]`.
fn lagrange_monomials<S: Scalar>(nodes: &[S]) -> Vec<Vec<S>> {
    let k = nodes.len();
    let mut out = Vec::with_capacity(k);
    for s in 0..k {
        let mut poly = vec![S::one()];
        let mut denom = S::one();
        for (j, &xj) in nodes.iter().enumerate() {
            if j == s {
                continue;
            }
            let mut next = vec![S::zero(); poly.len() + 1];
            for (p, &c) in poly.iter().enumerate() {
                next[p + 1] += c;
                next[p] -= c * xj;
            }
            poly = next;
            denom *= nodes[s] - xj;
        }
        out.push(poly.into_iter().map(|c| c / denom).collect());
    }
    out
}

/// Static pieces of the consistency map.
struct Consistency<'a, S: Scalar> {
    model: &'a MfgModel<S>,
    riesz: RieszOps<S>,
    n: usize,
    pi: &'a [Matrix<S>],
    /// `K_j^{-1}`, `K_j^{-1} L_j` and `L_j^T` in Riccati time.
    kinv: Vec<Matrix<S>>,
    kinv_l: Vec<Matrix<S>>,
    l_t: Vec<Matrix<S>>,
    /// `Pi_j F1 - M F1_hat`.
    src: Vec<Matrix<S>>,
    g_f2hat: Matrix<S>,
}

impl<'a, S: Scalar> Consistency<'a, S> {
    fn new(model: &'a MfgModel<S>, ric: &'a RiccatiSolution<S>) -> Result<Self> {
        let n = ric.grid.steps;
        let mut kinv = Vec::with_capacity(n + 1);
        let mut kinv_l = Vec::with_capacity(n + 1);
        for (j, (k, l)) in ric.k_ops.iter().zip(&ric.l_ops).enumerate() {
            let ki = k.inverse().map_err(|_| Error::Singular { step: Some(j) })?;
            kinv_l.push(ki.matmul(l));
            kinv.push(ki);
        }
        let m_f1hat = model.m_cost.matmul(&model.f1_hat);
        let src = ric.pi.iter().map(|p| p.matmul(&model.f1).axpy(-S::one(), &m_f1hat)).collect();
        Ok(Self {
            model,
            riesz: model.riesz(),
            n,
            pi: &ric.pi,
            kinv,
            kinv_l,
            l_t: ric.l_ops.iter().map(Matrix::transpose).collect(),
            src,
            g_f2hat: model.g_cost.matmul(&model.f2_hat),
        })
    }

    /// `(F2 x + sigma)^T Pi_j`, a `d_V x d_H` operator.
    fn noise_pi(&self, x: &[S], j: usize) -> Matrix<S> {
        let mut w = self.model.f2.apply(x);
        w.axpy_inplace(S::one(), &self.model.sigma);
        w.tr_matmul(&self.pi[j])
    }

    /// Forward-time offsets `K^{-1}[Gamma_2 + B^T q]` together with `Gamma_1` terms.
    fn offsets(&self, xbar: &[Vec<S>], q: &[Vec<S>]) -> Result<(Vec<Vec<S>>, Vec<Vec<S>>)> {
        let mut off = Vec::with_capacity(self.n + 1);
        let mut g1 = Vec::with_capacity(self.n + 1);
        for (i, x) in xbar.iter().enumerate() {
            let j = self.n - i;
            let w = self.noise_pi(x, j);
            let mut rhs = self.riesz.gamma(&w, GammaKind::Two)?;
            axpy(S::one(), &self.model.b.tr_matvec(&q[j]), &mut rhs);
            off.push(self.kinv[j].matvec(&rhs));
            g1.push(self.riesz.gamma(&w, GammaKind::One)?);
        }
        Ok((off, g1))
    }

    /// `Phi` in forward time and `Psi` in Riccati time.
    fn integrands(&self, xbar: &[Vec<S>], q: &[Vec<S>]) -> Result<(Vec<Vec<S>>, Vec<Vec<S>>, Vec<Vec<S>>)> {
        let (off, g1) = self.offsets(xbar, q)?;
        let mut phi = Vec::with_capacity(self.n + 1);
        let mut psi = vec![Vec::new(); self.n + 1];
        for (i, x) in xbar.iter().enumerate() {
            let j = self.n - i;
            let mut v = self.kinv_l[j].matvec(x);
            axpy(S::one(), &off[i], &mut v);
            let mut p = self.model.b.matvec(&v);
            axpy(-S::one(), &self.model.f1.matvec(x), &mut p);
            phi.push(p);
            let mut s = self.src[j].matvec(x);
            axpy(-S::one(), &self.l_t[j].matvec(&off[i]), &mut s);
            axpy(S::one(), &g1[i], &mut s);
            psi[j] = s;
        }
        Ok((phi, psi, off))
    }

    fn q_initial(&self, x_t: &[S]) -> Vec<S> {
        self.g_f2hat.matvec(x_t).into_iter().map(|v| -v).collect()
    }
}

fn sup_diff<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>]) -> S {
    a.iter().zip(b).map(|(x, y)| norm2(&sub_vec(x, y))).fold(S::zero(), S::max)
}

fn blend<S: Scalar>(cur: &mut [Vec<S>], cand: &[Vec<S>], w: S) {
    for (c, n) in cur.iter_mut().zip(cand) {
        for (ci, ni) in c.iter_mut().zip(n) {
            *ci = *ci + w * (*ni - *ci);
        }
    }
}

/// Damped Picard iteration on `(xbar, q)` with the default quadrature.
pub fn solve_consistency<S: Scalar>(
    model: &MfgModel<S>,
    ric: &RiccatiSolution<S>,
    tol: S,
    max_iter: usize,
    damping: S,
) -> Result<EquilibriumSolution<S>> {
    let opts = ConsistencyOptions {
        tol: tol.to_f64_lossy(),
        max_iter,
        damping: damping.to_f64_lossy(),
        quadrature: Quadrature::default(),
    };
    solve_consistency_with(model, ric, &opts)
}

/// Damped Picard iteration on `(xbar, q)`.
pub fn solve_consistency_with<S: Scalar>(
    model: &MfgModel<S>,
    ric: &RiccatiSolution<S>,
    opts: &ConsistencyOptions,
) -> Result<EquilibriumSolution<S>> {
    model.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::Invalid("tolerance must be positive".into()));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::Invalid("damping must lie in (0, 1]".into()));
    }
    let grid = ric.grid;
    let n = grid.steps;
    if ric.pi.len() != n + 1 || (grid.horizon - model.horizon).abs() > S::eps() * S::of(16.0) * model.horizon {
        return dim_err("Riccati solution does not match the model horizon or grid");
    }
    let rep = contraction_check(model, Some(ric))?;
    if !rep.pass {
        log::warn!("contraction condition fails (value {:e}); iterating anyway", rep.value.to_f64_lossy());
    }
    let h = grid.dt();
    let quad = if n < 3 { Quadrature::Trapezoid } else { opts.quadrature };
    let fwd = ExpIntegrator::new(&model.a, h, quad)?;
    let bwd = ExpIntegrator::new(&model.a.transpose(), h, quad)?;
    let cons = Consistency::new(model, ric)?;
    let tol = S::of(opts.tol);
    let w = S::of(opts.damping);

    let mut xbar = vec![model.xi_mean.clone(); n + 1];
    let mut q = vec![vec![S::zero(); model.dim_h()]; n + 1];
    let mut history = Vec::new();
    let mut residual = S::infinity();
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let (phi, psi, _) = cons.integrands(&xbar, &q)?;
        let x_new = fwd.propagate(&model.xi_mean, &phi, -S::one());
        let q_new = bwd.propagate(&cons.q_initial(&xbar[n]), &psi, S::one());
        residual = sup_diff(&x_new, &xbar).max(sup_diff(&q_new, &q));
        if !residual.is_finite() {
            return Err(Error::NonFinite { step: iterations });
        }
        history.push(residual);
        blend(&mut xbar, &x_new, w);
        blend(&mut q, &q_new, w);
        log::trace!("picard iteration {iterations}: residual {:e}", residual.to_f64_lossy());
        if residual < tol {
            break;
        }
    }
    if !(residual < tol) {
        return Err(Error::NotConverged { iterations, residual: residual.to_f64_lossy() });
    }
    let (_, psi, _) = cons.integrands(&xbar, &q)?;
    q = bwd.propagate(&cons.q_initial(&xbar[n]), &psi, S::one());
    let (offset, _) = cons.offsets(&xbar, &q)?;
    let gain: Vec<Matrix<S>> = (0..=n).map(|i| cons.kinv_l[n - i].clone()).collect();
    let mut sol = EquilibriumSolution {
        grid,
        riccati: ric.clone(),
        q,
        xbar,
        ubar: Vec::new(),
        fixed_point_residual: residual,
        iterations,
        residual_history: history,
        gain,
        offset,
    };
    sol.ubar = (0..=n).map(|i| sol.control(i, &sol.xbar[i])).collect();
    Ok(sol)
}

/// Riccati solve followed by the consistency iteration.
pub fn solve_equilibrium<S: Scalar>(
    model: &MfgModel<S>,
    steps: usize,
    opts: &ConsistencyOptions,
) -> Result<EquilibriumSolution<S>> {
    let grid = TimeGrid::new(model.horizon, steps)?;
    let ric = solve_riccati(model, &grid)?;
    solve_consistency_with(model, &ric, opts)
}

/// Simulated state and control paths, row-major `(path, time, component)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle<S: Scalar> {
    pub seed: u64,
    pub n_paths: usize,
    pub n_times: usize,
    pub dim_h: usize,
    pub dim_u: usize,
    pub horizon: S,
    pub states: Vec<S>,
    pub controls: Vec<S>,
}

impl<S: Scalar> PathBundle<S> {
    /// State of `path` at grid index `i`.
    pub fn state(&self, path: usize, i: usize) -> &[S] {
        let o = (path * self.n_times + i) * self.dim_h;
        &self.states[o..o + self.dim_h]
    }

    /// Control of `path` at grid index `i`.
    pub fn control(&self, path: usize, i: usize) -> &[S] {
        let o = (path * self.n_times + i) * self.dim_u;
        &self.controls[o..o + self.dim_u]
    }

    /// Sample mean of the state at every grid index.
    pub fn mean_states(&self) -> Vec<Vec<S>> {
        let np = S::of_usize(self.n_paths.max(1));
        (0..self.n_times)
            .map(|i| {
                let mut m = vec![S::zero(); self.dim_h];
                for p in 0..self.n_paths {
                    axpy(S::one(), self.state(p, i), &mut m);
                }
                m.into_iter().map(|v| v / np).collect()
            })
            .collect()
    }

    /// Standard error of the state mean at every grid index, `sqrt(sum_c var_c / N)`.
    pub fn mean_state_stderr(&self) -> Vec<S> {
        if self.n_paths < 2 {
            return vec![S::zero(); self.n_times];
        }
        let means = self.mean_states();
        let np = S::of_usize(self.n_paths);
        (0..self.n_times)
            .map(|i| {
                let mut ss = S::zero();
                for p in 0..self.n_paths {
                    for (x, m) in self.state(p, i).iter().zip(&means[i]) {
                        ss += (*x - *m) * (*x - *m);
                    }
                }
                (ss / (np - S::one()) / np).sqrt()
            })
            .collect()
    }

    fn check_paired(&self, other: &Self) -> Result<()> {
        if self.seed != other.seed
            || self.n_paths != other.n_paths
            || self.n_times != other.n_times
            || self.dim_h != other.dim_h
            || self.dim_u != other.dim_u
            || self.horizon != other.horizon
        {
            return dim_err("path bundles are not paired (seed, shape or horizon differ)");
        }
        Ok(())
    }

    /// Writes a little-endian binary dump: magic, five `u64` shape words, then
    /// states and controls as `f64`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"MFGPATH1")?;
        for v in [self.seed, self.n_paths as u64, self.n_times as u64, self.dim_h as u64, self.dim_u as u64] {
            f.write_all(&v.to_le_bytes())?;
        }
        for v in self.states.iter().chain(&self.controls) {
            f.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Paired moments of two bundles: `sqrt(max_i mean_p ||dx||^2)`, `sqrt(max_i
/// mean_p ||du||^2)` and the standard errors of those maxima.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct PairedMoments<S: Scalar> {
    pub dx: S,
    pub du: S,
    pub dx_stderr: S,
    pub du_stderr: S,
}

fn sup_second_moment<S: Scalar>(n_paths: usize, n_times: usize, diff: impl Fn(usize, usize) -> S) -> (S, S) {
    if n_paths == 0 {
        return (S::zero(), S::zero());
    }
    let np = S::of_usize(n_paths);
    let mut best = (S::zero(), S::zero());
    for i in 0..n_times {
        let vals: Vec<S> = (0..n_paths).map(|p| diff(p, i)).collect();
        let mean = vals.iter().fold(S::zero(), |a, &v| a + v) / np;
        if mean >= best.0 {
            let var = if n_paths > 1 {
                vals.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) / (np - S::one())
            } else {
                S::zero()
            };
            best = (mean, (var / np).sqrt());
        }
    }
    let root = best.0.sqrt();
    // delta method for the square root of a mean
    let se = if root > S::zero() { best.1 / (S::of(2.0) * root) } else { best.1.sqrt() };
    (root, se)
}

/// `H^2`-type Monte-Carlo distances between paired bundles.
pub fn paired_moments<S: Scalar>(b1: &PathBundle<S>, b2: &PathBundle<S>) -> Result<PairedMoments<S>> {
    b1.check_paired(b2)?;
    let sq = |a: &[S], b: &[S]| a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y));
    let (dx, dx_stderr) = sup_second_moment(b1.n_paths, b1.n_times, |p, i| sq(b1.state(p, i), b2.state(p, i)));
    let (du, du_stderr) = sup_second_moment(b1.n_paths, b1.n_times, |p, i| sq(b1.control(p, i), b2.control(p, i)));
    Ok(PairedMoments { dx, du, dx_stderr, du_stderr })
}

/// `sqrt(E int_0^T ||u1 - u2||^2 dt)` over paired paths, trapezoid in time.
pub fn m2_distance<S: Scalar>(b1: &PathBundle<S>, b2: &PathBundle<S>) -> Result<S> {
    b1.check_paired(b2)?;
    if b1.n_paths == 0 || b1.n_times < 2 {
        return Ok(S::zero());
    }
    let h = b1.horizon / S::of_usize(b1.n_times - 1);
    let half = S::of(0.5);
    let mut total = S::zero();
    for p in 0..b1.n_paths {
        for i in 0..b1.n_times {
            let d: S = b1
                .control(p, i)
                .iter()
                .zip(b2.control(p, i))
                .fold(S::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y));
            let w = if i == 0 || i + 1 == b1.n_times { half } else { S::one() };
            total += w * h * d;
        }
    }
    Ok((total / S::of_usize(b1.n_paths)).sqrt())
}

/// Euler-Maruyama paths of the equilibrium state under the feedback law,
/// with common random numbers keyed on `(seed, path, step, component)`.
pub fn simulate_paths<S: Scalar>(
    model: &MfgModel<S>,
    eq: &EquilibriumSolution<S>,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle<S>> {
    let (dh, du, dv) = model.dims();
    let n = eq.grid.steps;
    let nt = n + 1;
    if eq.xbar.len() != nt || eq.gain.len() != nt {
        return dim_err("equilibrium grid does not match its arrays");
    }
    let h = eq.grid.dt();
    let ncomp = dh.max(dv) as u64;
    let (vals, vecs) = model.xi_cov.sym_eig();
    let xi_root = vecs.matmul(&Matrix::diag(&vals.iter().map(|v| v.max(S::zero()).sqrt()).collect::<Vec<_>>()));
    let xi_random = xi_root.max_abs() > S::zero();
    let q = &model.q_cov;
    let sq: Vec<S> = q.eigenvalues.iter().map(|v| (v.max(S::zero()) * h).sqrt()).collect();
    let d_k: Vec<Matrix<S>> = (0..dv).map(|k| model.d_op.contract_second(&q.eigenvector(k))).collect();
    let e_k: Vec<Matrix<S>> = (0..dv).map(|k| model.e_op.contract_second(&q.eigenvector(k))).collect();
    let f2_k: Vec<Matrix<S>> = (0..dv).map(|k| model.f2.contract_second(&q.eigenvector(k))).collect();
    let sig_k: Vec<Vec<S>> = (0..dv).map(|k| model.sigma.matvec(&q.eigenvector(k))).collect();
    // drift and noise pieces that depend only on xbar
    let drift_mf: Vec<Vec<S>> = eq.xbar.iter().map(|x| model.f1.matvec(x)).collect();
    let noise_mf: Vec<Vec<Vec<S>>> = eq
        .xbar
        .iter()
        .map(|x| {
            (0..dv)
                .map(|k| {
                    let mut v = f2_k[k].matvec(x);
                    axpy(S::one(), &sig_k[k], &mut v);
                    v
                })
                .collect()
        })
        .collect();
    let noisy = sq.iter().any(|s| *s > S::zero());

    let per_path: Vec<(Vec<S>, Vec<S>)> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut gen = KeyedNormals::new(seed, path as u64);
            let mut xs = Vec::with_capacity(nt * dh);
            let mut us = Vec::with_capacity(nt * du);
            let mut x = model.xi_mean.clone();
            if xi_random {
                let z: Vec<S> = (0..dh).map(|c| S::of(gen.at(c as u64))).collect();
                axpy(S::one(), &xi_root.matvec(&z), &mut x);
            }
            for i in 0..nt {
                let u = eq.control(i, &x);
                xs.extend_from_slice(&x);
                us.extend_from_slice(&u);
                if i == n {
                    break;
                }
                let mut next = x.clone();
                let mut drift = model.a.matvec(&x);
                axpy(S::one(), &model.b.matvec(&u), &mut drift);
                axpy(S::one(), &drift_mf[i], &mut drift);
                axpy(h, &drift, &mut next);
                if noisy {
                    for k in 0..dv {
                        if sq[k] == S::zero() {
                            continue;
                        }
                        let z = S::of(gen.at((i as u64 + 1) * ncomp + k as u64));
                        let mut g = d_k[k].matvec(&x);
                        axpy(S::one(), &e_k[k].matvec(&u), &mut g);
                        axpy(S::one(), &noise_mf[i][k], &mut g);
                        axpy(sq[k] * z, &g, &mut next);
                    }
                }
                x = next;
            }
            (xs, us)
        })
        .collect();
    let mut states = Vec::with_capacity(n_paths * nt * dh);
    let mut controls = Vec::with_capacity(n_paths * nt * du);
    for (xs, us) in per_path {
        states.extend(xs);
        controls.extend(us);
    }
    if states.iter().chain(&controls).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: n });
    }
    Ok(PathBundle { seed, n_paths, n_times: nt, dim_h: dh, dim_u: du, horizon: eq.grid.horizon, states, controls })
}
