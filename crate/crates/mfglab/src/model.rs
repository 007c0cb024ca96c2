//! Game instances, rule perturbations and the Riesz trace maps.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::operator_core::{hs_norm, spectral_norm, tensor_op_norm, CovarianceSpec, Matrix, Tensor3};
use crate::scalar::Scalar;

/// One linear-quadratic mean-field game on truncated spaces `H`, `U`, `V`.
///
/// Dynamics `dx = (Ax + Bu + F1 xbar) dt + (Dx + Eu + F2 xbar + sigma) dW`
/// and cost weights `M`, `G`, `F1_hat`, `F2_hat` on the tracking terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct MfgModel<S: Scalar> {
    pub a: Matrix<S>,
    pub b: Matrix<S>,
    pub d_op: Tensor3<S>,
    pub e_op: Tensor3<S>,
    pub f1: Matrix<S>,
    pub f2: Tensor3<S>,
    pub sigma: Matrix<S>,
    pub m_cost: Matrix<S>,
    pub g_cost: Matrix<S>,
    pub f1_hat: Matrix<S>,
    pub f2_hat: Matrix<S>,
    pub q_cov: CovarianceSpec<S>,
    pub horizon: S,
    pub xi_mean: Vec<S>,
    pub xi_cov: Matrix<S>,
}

/// Parameters of the one-dimensional example with `A = -a`, `B = 1`,
/// `F1 = a`, `F1_hat = F2_hat = b`, `sigma = s`, `M = m`, `G = g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct ScalarExample<S: Scalar> {
    pub a: S,
    pub m: S,
    pub g: S,
    pub b: S,
    pub s: S,
    pub xi_mean: S,
    pub xi_var: S,
    pub horizon: S,
    pub q: S,
}

impl<S: Scalar> Default for ScalarExample<S> {
    fn default() -> Self {
        Self {
            a: S::one(),
            m: S::of(0.75),
            g: S::of(0.5),
            b: S::one(),
            s: S::of(0.2),
            xi_mean: S::one(),
            xi_var: S::zero(),
            horizon: S::one(),
            q: S::one(),
        }
    }
}

impl<S: Scalar> MfgModel<S> {
    /// `d_H`.
    pub fn dim_h(&self) -> usize {
        self.a.rows()
    }

    /// `d_U`.
    pub fn dim_u(&self) -> usize {
        self.b.cols()
    }

    /// `d_V`.
    pub fn dim_v(&self) -> usize {
        self.q_cov.dim_v
    }

    /// `(d_H, d_U, d_V)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dim_h(), self.dim_u(), self.dim_v())
    }

    /// All-zero operators with `Q = I`, `T = 1` and deterministic `xi = 0`.
    pub fn zeros(d_h: usize, d_u: usize, d_v: usize) -> Self {
        Self {
            a: Matrix::zeros(d_h, d_h),
            b: Matrix::zeros(d_h, d_u),
            d_op: Tensor3::zeros(d_h, d_h, d_v),
            e_op: Tensor3::zeros(d_h, d_u, d_v),
            f1: Matrix::zeros(d_h, d_h),
            f2: Tensor3::zeros(d_h, d_h, d_v),
            sigma: Matrix::zeros(d_h, d_v),
            m_cost: Matrix::zeros(d_h, d_h),
            g_cost: Matrix::zeros(d_h, d_h),
            f1_hat: Matrix::zeros(d_h, d_h),
            f2_hat: Matrix::zeros(d_h, d_h),
            q_cov: CovarianceSpec::diagonal(vec![S::one(); d_v]),
            horizon: S::one(),
            xi_mean: vec![S::zero(); d_h],
            xi_cov: Matrix::zeros(d_h, d_h),
        }
    }

    /// The one-dimensional example game.
    pub fn scalar_example(p: &ScalarExample<S>) -> Self {
        let one = |x: S| Matrix::from_row_major(1, 1, vec![x]).expect("1x1");
        let mut m = Self::zeros(1, 1, 1);
        m.a = one(-p.a);
        m.b = one(S::one());
        m.f1 = one(p.a);
        m.sigma = one(p.s);
        m.m_cost = one(p.m);
        m.g_cost = one(p.g);
        m.f1_hat = one(p.b);
        m.f2_hat = one(p.b);
        m.q_cov = CovarianceSpec::diagonal(vec![p.q]);
        m.horizon = p.horizon;
        m.xi_mean = vec![p.xi_mean];
        m.xi_cov = one(p.xi_var);
        m
    }

    /// Checks shapes, finiteness and the sign conditions on the cost weights.
    pub fn validate(&self) -> Result<()> {
        let (h, u, v) = self.dims();
        if h == 0 || u == 0 || v == 0 {
            return dim_err("all of d_H, d_U, d_V must be positive");
        }
        let mats: [(&str, &Matrix<S>, (usize, usize)); 9] = [
            ("a", &self.a, (h, h)),
            ("b", &self.b, (h, u)),
            ("f1", &self.f1, (h, h)),
            ("sigma", &self.sigma, (h, v)),
            ("m_cost", &self.m_cost, (h, h)),
            ("g_cost", &self.g_cost, (h, h)),
            ("f1_hat", &self.f1_hat, (h, h)),
            ("f2_hat", &self.f2_hat, (h, h)),
            ("xi_cov", &self.xi_cov, (h, h)),
        ];
        for (name, m, shape) in mats {
            if m.shape() != shape {
                return dim_err(format!("{name} has shape {:?}, expected {shape:?}", m.shape()));
            }
            if !m.is_finite() {
                return Err(Error::Invalid(format!("{name} has non-finite entries")));
            }
        }
        let tens: [(&str, &Tensor3<S>, (usize, usize, usize)); 3] =
            [("d_op", &self.d_op, (h, h, v)), ("e_op", &self.e_op, (h, u, v)), ("f2", &self.f2, (h, h, v))];
        for (name, t, shape) in tens {
            if t.dims() != shape {
                return dim_err(format!("{name} has shape {:?}, expected {shape:?}", t.dims()));
            }
            if !t.is_finite() {
                return Err(Error::Invalid(format!("{name} has non-finite entries")));
            }
        }
        if self.xi_mean.len() != h || self.xi_mean.iter().any(|x| !x.is_finite()) {
            return dim_err(format!("xi_mean must be a finite vector of length {h}"));
        }
        if !(self.horizon > S::zero()) || !self.horizon.is_finite() {
            return Err(Error::Invalid("horizon must be positive and finite".into()));
        }
        self.q_cov.validate()?;
        let tol = S::of(1e-10);
        for (name, m) in [("m_cost", &self.m_cost), ("g_cost", &self.g_cost), ("xi_cov", &self.xi_cov)] {
            if m.asymmetry() > tol {
                return Err(Error::Invalid(format!("{name} is not symmetric")));
            }
            if m.min_sym_eig() < -tol {
                return Err(Error::Invalid(format!("{name} is not positive semidefinite")));
            }
        }
        Ok(())
    }

    /// `self` with the rules shifted by `p`.
    pub fn with_perturbation(&self, p: &RulePerturbation<S>) -> Result<Self> {
        let (h, u, v) = self.dims();
        if p.dims() != (h, u, v) {
            return dim_err(format!("perturbation dims {:?} against model dims {:?}", p.dims(), (h, u, v)));
        }
        let mut out = self.clone();
        out.a = &self.a + &p.delta_a;
        out.b = &self.b + &p.delta_b;
        out.f2 = self.f2.axpy(S::one(), &p.delta_f2);
        Ok(out)
    }

    /// Rule difference `self - reference`, ignoring all other operators.
    pub fn rule_difference(&self, reference: &Self) -> Result<RulePerturbation<S>> {
        if self.dims() != reference.dims() {
            return dim_err("models have different dimensions");
        }
        Ok(RulePerturbation {
            delta_a: &self.a - &reference.a,
            delta_b: &self.b - &reference.b,
            delta_f2: self.f2.axpy(-S::one(), &reference.f2),
        })
    }

    /// Riesz maps built from this model's noise operators.
    pub fn riesz(&self) -> RieszOps<S> {
        RieszOps::new(self)
    }

    /// Norms of the operators entering the stability constants.
    pub fn norm_d(&self) -> S {
        tensor_op_norm(&self.d_op)
    }

    pub fn norm_e(&self) -> S {
        tensor_op_norm(&self.e_op)
    }

    pub fn norm_f2(&self) -> S {
        tensor_op_norm(&self.f2)
    }

    /// `E ||xi||^2 = |xi_mean|^2 + tr(xi_cov)`.
    pub fn xi_second_moment(&self) -> S {
        crate::scalar::dot(&self.xi_mean, &self.xi_mean) + self.xi_cov.trace()
    }
}

/// `(Delta A, Delta B, Delta F2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct RulePerturbation<S: Scalar> {
    pub delta_a: Matrix<S>,
    pub delta_b: Matrix<S>,
    pub delta_f2: Tensor3<S>,
}

/// Which rule a perturbation moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
    F2,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::A => "A",
            Family::B => "B",
            Family::F2 => "F2",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Family::A),
            "B" | "b" => Ok(Family::B),
            "F2" | "f2" => Ok(Family::F2),
            other => Err(Error::Invalid(format!("unknown family {other:?}"))),
        }
    }
}

impl<S: Scalar> RulePerturbation<S> {
    pub fn zeros(d_h: usize, d_u: usize, d_v: usize) -> Self {
        Self {
            delta_a: Matrix::zeros(d_h, d_h),
            delta_b: Matrix::zeros(d_h, d_u),
            delta_f2: Tensor3::zeros(d_h, d_h, d_v),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.delta_a.rows(), self.delta_b.cols(), self.delta_f2.in2_dim())
    }

    /// HS norms of the three blocks.
    pub fn hs_norms(&self) -> [S; 3] {
        [hs_norm(&self.delta_a), hs_norm(&self.delta_b), self.delta_f2.hs_norm()]
    }

    /// Norm induced by the rule-space inner product.
    pub fn norm(&self) -> S {
        let [a, b, f] = self.hs_norms();
        (a * a + b * b + f * f).sqrt()
    }

    /// Operator norms of the three blocks.
    pub fn op_norms(&self) -> [S; 3] {
        [spectral_norm(&self.delta_a), spectral_norm(&self.delta_b), tensor_op_norm(&self.delta_f2)]
    }

    pub fn scale(&self, c: S) -> Self {
        Self { delta_a: self.delta_a.scale(c), delta_b: self.delta_b.scale(c), delta_f2: self.delta_f2.scale(c) }
    }

    /// Families with a nonzero block.
    pub fn active_families(&self) -> Vec<Family> {
        let [a, b, f] = self.hs_norms();
        let mut out = Vec::new();
        if a > S::zero() {
            out.push(Family::A);
        }
        if b > S::zero() {
            out.push(Family::B);
        }
        if f > S::zero() {
            out.push(Family::F2);
        }
        out
    }
}

/// Closed ellipsoid `||dA|| <= rho_a`, `||dB|| <= rho_b`, `||dF2|| <= rho_f2` (HS norms).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct PerturbationEllipsoid<S: Scalar> {
    pub rho_a: S,
    pub rho_b: S,
    pub rho_f2: S,
}

impl<S: Scalar> PerturbationEllipsoid<S> {
    pub fn new(rho_a: S, rho_b: S, rho_f2: S) -> Result<Self> {
        if !(rho_a > S::zero() && rho_b > S::zero() && rho_f2 > S::zero()) {
            return Err(Error::Invalid("ellipsoid radii must be positive".into()));
        }
        Ok(Self { rho_a, rho_b, rho_f2 })
    }
}

/// Whether `p` lies in the ellipsoid around `reference`.
pub fn ellipsoid_contains<S: Scalar>(
    reference: &MfgModel<S>,
    p: &RulePerturbation<S>,
    ell: &PerturbationEllipsoid<S>,
) -> bool {
    if p.dims() != reference.dims() {
        return false;
    }
    let [a, b, f] = p.hs_norms();
    a <= ell.rho_a && b <= ell.rho_b && f <= ell.rho_f2
}

/// Selector for the three operator-valued Riesz maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaKind {
    /// `Delta_1: L(H) -> L(H, U)`.
    One,
    /// `Delta_2: L(H) -> L(H)`.
    Two,
    /// `Delta_3: L(H) -> L(U)`.
    Three,
}

/// Selector for the two vector-valued Riesz maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaKind {
    /// `Gamma_1`, valued in `H`.
    One,
    /// `Gamma_2`, valued in `U`.
    Two,
}

/// Precomputed slices `D_k = x |-> (Dx) v_k` and `E_k = u |-> (Eu) v_k`
/// along the eigenvectors `v_k` of `Q`.
#[derive(Clone, Debug)]
pub struct RieszOps<S: Scalar> {
    q: Vec<S>,
    v: Vec<Vec<S>>,
    d_k: Vec<Matrix<S>>,
    e_k: Vec<Matrix<S>>,
    d_zero: bool,
    e_zero: bool,
}

impl<S: Scalar> RieszOps<S> {
    pub fn new(model: &MfgModel<S>) -> Self {
        Self::from_parts(&model.d_op, &model.e_op, &model.q_cov)
    }

    pub fn from_parts(d: &Tensor3<S>, e: &Tensor3<S>, q_cov: &CovarianceSpec<S>) -> Self {
        let dv = q_cov.dim_v;
        let v: Vec<Vec<S>> = (0..dv).map(|k| q_cov.eigenvector(k)).collect();
        let d_k = v.iter().map(|vk| d.contract_second(vk)).collect();
        let e_k = v.iter().map(|vk| e.contract_second(vk)).collect();
        Self {
            q: q_cov.eigenvalues.clone(),
            v,
            d_k,
            e_k,
            d_zero: d.hs_norm() == S::zero(),
            e_zero: e.hs_norm() == S::zero(),
        }
    }

    fn dim_h(&self) -> usize {
        self.d_k.first().map_or(0, Matrix::rows)
    }

    /// `Delta_1`, `Delta_2` or `Delta_3` applied to `r` (`d_H x d_H`).
    pub fn delta(&self, r: &Matrix<S>, which: DeltaKind) -> Result<Matrix<S>> {
        let h = self.dim_h();
        if r.shape() != (h, h) {
            return dim_err(format!("Riesz delta expects a {h}x{h} operator, got {:?}", r.shape()));
        }
        // the pairing puts the first argument on the left for Delta_1 and on
        // the right for Delta_2 and Delta_3, so those two see r transposed
        let (left, right, zero, r) = match which {
            DeltaKind::One => (&self.e_k, &self.d_k, self.d_zero || self.e_zero, r.clone()),
            DeltaKind::Two => (&self.d_k, &self.d_k, self.d_zero, r.transpose()),
            DeltaKind::Three => (&self.e_k, &self.e_k, self.e_zero, r.transpose()),
        };
        let rows = left.first().map_or(0, Matrix::cols);
        let cols = right.first().map_or(0, Matrix::cols);
        let mut out = Matrix::zeros(rows, cols);
        if zero {
            return Ok(out);
        }
        for ((qk, lk), rk) in self.q.iter().zip(left).zip(right) {
            if *qk == S::zero() {
                continue;
            }
            out.axpy_inplace(*qk, &lk.tr_matmul(&r.matmul(rk)));
        }
        Ok(out)
    }

    /// `Gamma_1` or `Gamma_2` applied to `r` (`d_V x d_H`).
    pub fn gamma(&self, r: &Matrix<S>, which: GammaKind) -> Result<Vec<S>> {
        let h = self.dim_h();
        let dv = self.q.len();
        if r.shape() != (dv, h) {
            return dim_err(format!("Riesz gamma expects a {dv}x{h} operator, got {:?}", r.shape()));
        }
        let (slices, zero) = match which {
            GammaKind::One => (&self.d_k, self.d_zero),
            GammaKind::Two => (&self.e_k, self.e_zero),
        };
        let n = slices.first().map_or(0, Matrix::cols);
        let mut out = vec![S::zero(); n];
        if zero {
            return Ok(out);
        }
        for ((qk, sk), vk) in self.q.iter().zip(slices).zip(&self.v) {
            if *qk == S::zero() {
                continue;
            }
            // sk^T r^T v_k = (r sk)^T v_k
            let rv = r.tr_matvec(vk);
            let contrib = sk.tr_matvec(&rv);
            crate::scalar::axpy(*qk, &contrib, &mut out);
        }
        Ok(out)
    }
}

/// `Delta_which(r)` for `model`.
pub fn riesz_delta<S: Scalar>(model: &MfgModel<S>, r: &Matrix<S>, which: DeltaKind) -> Result<Matrix<S>> {
    model.riesz().delta(r, which)
}

/// `Gamma_which(r)` for `model`.
pub fn riesz_gamma<S: Scalar>(model: &MfgModel<S>, r_hv: &Matrix<S>, which: GammaKind) -> Result<Vec<S>> {
    model.riesz().gamma(r_hv, which)
}

/// Bounds `R1..R5` on the Riesz maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RieszBounds<S: Scalar> {
    pub r1: S,
    pub r2: S,
    pub r3: S,
    pub r4: S,
    pub r5: S,
}

impl<S: Scalar> RieszBounds<S> {
    /// Bounds from `tr(Q)`, `||D||` and `||E||`.
    pub fn from_norms(tr_q: S, norm_d: S, norm_e: S) -> Self {
        Self {
            r1: tr_q * norm_d,
            r2: tr_q * norm_e,
            r3: tr_q * norm_d * norm_e,
            r4: tr_q * norm_d * norm_d,
            r5: tr_q * norm_e * norm_e,
        }
    }

    pub fn as_array(&self) -> [S; 5] {
        [self.r1, self.r2, self.r3, self.r4, self.r5]
    }
}

/// `R1..R5` for `model`.
pub fn riesz_bounds<S: Scalar>(model: &MfgModel<S>) -> RieszBounds<S> {
    RieszBounds::from_norms(model.q_cov.trace(), model.norm_d(), model.norm_e())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_operator_gives_zero_maps() {
        let mut m = MfgModel::<f64>::zeros(2, 1, 2);
        m.d_op = Tensor3::from_fn(2, 2, 2, |i, j, k| (i + 2 * j + k) as f64);
        let r = Matrix::zeros(2, 2);
        for w in [DeltaKind::One, DeltaKind::Two, DeltaKind::Three] {
            assert_eq!(riesz_delta(&m, &r, w).unwrap().max_abs(), 0.0);
        }
        let rhv = Matrix::zeros(2, 2);
        assert_eq!(riesz_gamma(&m, &rhv, GammaKind::One).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_example_validates() {
        MfgModel::scalar_example(&ScalarExample::<f64>::default()).validate().unwrap();
    }

    #[test]
    fn ellipsoid_boundary_is_closed() {
        let m = MfgModel::<f64>::zeros(1, 1, 1);
        let ell = PerturbationEllipsoid::new(0.5, 1.0, 1.0).unwrap();
        let mut p = RulePerturbation::zeros(1, 1, 1);
        p.delta_a.set(0, 0, 0.5);
        assert!(ellipsoid_contains(&m, &p, &ell));
        p.delta_b.set(0, 0, 2.0);
        assert!(!ellipsoid_contains(&m, &p, &ell));
    }
}
