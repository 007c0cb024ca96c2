//! Stability constants for perturbations of `A`, `B` and `F2`, the coupled
//! Gronwall bound, the well-posedness contraction check and empirical
//! perturbation sweeps.
//!
//! Every constant is a pure function of a [`Norms`] record, so the formulas
//! can be evaluated for any set of operator norms.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfg_solver::{paired_moments, simulate_paths, solve_equilibrium, ConsistencyOptions, EquilibriumSolution, PathBundle};
use crate::model::{Family, MfgModel, RulePerturbation};
use crate::operator_core::{semigroup_bound, spectral_norm, tensor_op_norm, DEFAULT_SEMIGROUP_GRID};
use crate::riccati::pi_uniform_bound_from;
use crate::scalar::Scalar;

/// Operator norms and scalars entering the constants.
///
/// Fields suffixed `_ref` belong to the reference model; the unsuffixed
/// `b`, `f2` and `m_t_pert` belong to the perturbed model. Differences are
/// operator norms of `A - A_ref`, `B - B_ref`, `F2 - F2_ref`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct Norms<S: Scalar> {
    pub horizon: S,
    pub m_t: S,
    pub m_t_pert: S,
    pub b_ref: S,
    pub b: S,
    pub d: S,
    pub e: S,
    pub tr_q: S,
    pub f1: S,
    pub f2_ref: S,
    pub f2: S,
    pub f1_hat: S,
    pub f2_hat: S,
    pub g: S,
    pub m: S,
    pub sigma: S,
    pub xi_bar: S,
    pub xi_m2: S,
    pub diff_a: S,
    pub diff_b: S,
    pub diff_f2: S,
}

impl<S: Scalar> Norms<S> {
    /// Norms of a single model, with the perturbation equal to the model.
    pub fn of_model(model: &MfgModel<S>) -> Result<Self> {
        Self::of_pair(model, model)
    }

    /// Norms of a reference model and a perturbed model.
    pub fn of_pair(reference: &MfgModel<S>, perturbed: &MfgModel<S>) -> Result<Self> {
        reference.validate()?;
        perturbed.validate()?;
        let diff = perturbed.rule_difference(reference)?;
        let [diff_a, diff_b, diff_f2] = diff.op_norms();
        let m_t = semigroup_bound(&reference.a, reference.horizon, DEFAULT_SEMIGROUP_GRID)?;
        let m_t_pert = if diff_a == S::zero() {
            m_t
        } else {
            semigroup_bound(&perturbed.a, reference.horizon, DEFAULT_SEMIGROUP_GRID)?
        };
        let b_ref = spectral_norm(&reference.b);
        let f2_ref = tensor_op_norm(&reference.f2);
        Ok(Self {
            horizon: reference.horizon,
            m_t,
            m_t_pert,
            b_ref,
            b: if diff_b == S::zero() { b_ref } else { spectral_norm(&perturbed.b) },
            d: reference.norm_d(),
            e: reference.norm_e(),
            tr_q: reference.q_cov.trace(),
            f1: spectral_norm(&reference.f1),
            f2_ref,
            f2: if diff_f2 == S::zero() { f2_ref } else { tensor_op_norm(&perturbed.f2) },
            f1_hat: spectral_norm(&reference.f1_hat),
            f2_hat: spectral_norm(&reference.f2_hat),
            g: spectral_norm(&reference.g_cost),
            m: spectral_norm(&reference.m_cost),
            sigma: spectral_norm(&reference.sigma),
            xi_bar: crate::scalar::norm2(&reference.xi_mean),
            xi_m2: reference.xi_second_moment(),
            diff_a,
            diff_b,
            diff_f2,
        })
    }

    /// `(R1, R2, R3, R4, R5)`.
    pub fn riesz(&self) -> (S, S, S, S, S) {
        let (q, d, e) = (self.tr_q, self.d, self.e);
        (q * d, q * e, q * d * e, q * d * d, q * e * e)
    }
}

/// Named constants with their hypotheses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ConstantLedger<S: Scalar> {
    pub family: Option<Family>,
    pub reference_bounds: BTreeMap<String, S>,
    pub perturbation_constants: BTreeMap<String, S>,
    pub conditions: BTreeMap<String, (S, bool)>,
    pub assertions: Vec<String>,
}

impl<S: Scalar> ConstantLedger<S> {
    /// Whether every recorded condition holds.
    pub fn all_conditions_pass(&self) -> bool {
        self.conditions.values().all(|&(_, ok)| ok)
    }

    /// Looks up a constant in either map.
    pub fn get(&self, name: &str) -> Option<S> {
        self.perturbation_constants.get(name).or_else(|| self.reference_bounds.get(name)).copied()
    }

    fn put(&mut self, name: &str, v: S) {
        self.perturbation_constants.insert(name.to_string(), v);
    }

    fn cond(&mut self, name: &str, v: S) {
        self.conditions.insert(name.to_string(), (v, v < S::one()));
    }
}

/// Bounds on the mean field and offset of one model from the six
/// `Phi`/`Psi` coefficients; returns `(hypothesis, C^xbar, C^q)`.
#[allow(clippy::too_many_arguments)]
fn own_bounds<S: Scalar>(
    mt: S,
    t: S,
    phi_x: S,
    phi_q: S,
    phi_c: S,
    psi_q: S,
    psi_x: S,
    psi_c: S,
    g_f2hat: S,
    xi_bar: S,
) -> (S, S, S) {
    let hyp = mt * (psi_x * t + g_f2hat);
    let cx = (S::one() - hyp).recip()
        * (mt * (phi_c * t + xi_bar) * (mt * phi_x * t).exp()
            + mt * phi_q * t * (mt * psi_c * t) * (mt * (phi_x + psi_q) * t).exp());
    let cq = mt * psi_c * t * (mt * psi_q * t).exp() + mt * (psi_x * t + g_f2hat) * (mt * psi_q * t).exp() * cx;
    (hyp, cx, cq)
}

/// Second-moment bound on the equilibrium state.
#[allow(clippy::too_many_arguments)]
fn state_bound<S: Scalar>(
    mt: S,
    t: S,
    xi_m2: S,
    b: S,
    e: S,
    d: S,
    cq: S,
    cx_bar: S,
    cpi: S,
    f1: S,
    f2: S,
    sigma: S,
    r2: S,
    r3: S,
) -> S {
    let three = S::of(3.0);
    let mt2 = mt * mt;
    let inner = three * mt2 * xi_m2
        + three * t * mt2 * ((b * b + e * e) * (b * cq + r2 * (f2 * cx_bar + sigma) * cpi))
        + three * t * mt2 * (f1 * f1 + f2 * f2) * cx_bar * cx_bar
        + three * t * mt2 * sigma * sigma;
    let growth = mt2 * ((b * b + e * e) * ((b + r3) * cpi).powi(2) + d * d) * three * t / S::of(2.0);
    inner.sqrt() * growth.exp()
}

/// Reference-model bounds `C^{Pi}`, `C^{xbar}`, `C^q`, `C^x` and intermediates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ReferenceRegularity<S: Scalar> {
    pub m_t: S,
    pub r: [S; 5],
    pub c_pi: S,
    pub c_phi_xbar: S,
    pub c_phi_q: S,
    pub c_phi_c: S,
    pub c_psi_q: S,
    pub c_psi_xbar: S,
    pub c_psi_c: S,
    pub c_xbar: S,
    pub c_q: S,
    pub c_x: S,
    /// `M_T (C^{Psi,xbar} T + ||G|| ||F2_hat||)`; the bounds need it below 1.
    pub hypothesis: S,
}

impl<S: Scalar> ReferenceRegularity<S> {
    pub fn hypothesis_holds(&self) -> bool {
        self.hypothesis < S::one()
    }

    /// Named values, including the hypothesis.
    pub fn to_map(&self) -> BTreeMap<String, S> {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("M_T", self.m_t),
            ("R1", self.r[0]),
            ("R2", self.r[1]),
            ("R3", self.r[2]),
            ("R4", self.r[3]),
            ("R5", self.r[4]),
            ("C^Pi_ref", self.c_pi),
            ("C^Phi,xbar_ref", self.c_phi_xbar),
            ("C^Phi,q_ref", self.c_phi_q),
            ("C^Phi,c_ref", self.c_phi_c),
            ("C^Psi,q_ref", self.c_psi_q),
            ("C^Psi,xbar_ref", self.c_psi_xbar),
            ("C^Psi,c_ref", self.c_psi_c),
            ("C^xbar_ref", self.c_xbar),
            ("C^q_ref", self.c_q),
            ("C^x_ref", self.c_x),
            ("hypothesis_ref", self.hypothesis),
        ] {
            m.insert(k.to_string(), v);
        }
        m
    }
}

/// Reference bounds from a [`Norms`] record.
pub fn reference_regularity_from<S: Scalar>(n: &Norms<S>) -> ReferenceRegularity<S> {
    let (r1, r2, r3, r4, r5) = n.riesz();
    let t = n.horizon;
    let mt = n.m_t;
    let b = n.b_ref;
    let c_pi = pi_uniform_bound_from(mt, t, n.d, n.tr_q, n.g, n.m);
    let c_phi_xbar = b * (b + r3 + r2 * n.f2_ref) * c_pi + n.f1;
    let c_phi_q = b * b;
    let c_phi_c = b * r2 * n.sigma * c_pi;
    let c_psi_q = c_pi * (b + r3) * b;
    let c_psi_xbar = (r1 * c_pi + c_pi * c_pi * (b + r3) * r2) * n.f2_ref + c_pi * n.f1 + n.m * n.f1_hat;
    let c_psi_c = r1 * c_pi + c_pi * c_pi * (b + r3) * r2;
    let (hypothesis, c_xbar, c_q) =
        own_bounds(mt, t, c_phi_xbar, c_phi_q, c_phi_c, c_psi_q, c_psi_xbar, c_psi_c, n.g * n.f2_hat, n.xi_bar);
    let c_x = state_bound(mt, t, n.xi_m2, b, n.e, n.d, c_q, c_xbar, c_pi, n.f1, n.f2_ref, n.sigma, r2, r3);
    ReferenceRegularity {
        m_t: mt,
        r: [r1, r2, r3, r4, r5],
        c_pi,
        c_phi_xbar,
        c_phi_q,
        c_phi_c,
        c_psi_q,
        c_psi_xbar,
        c_psi_c,
        c_xbar,
        c_q,
        c_x,
        hypothesis,
    }
}

/// Reference bounds for `model`.
pub fn reference_regularity<S: Scalar>(model: &MfgModel<S>) -> Result<ReferenceRegularity<S>> {
    Ok(reference_regularity_from(&Norms::of_model(model)?))
}

/// Constant cascade for one family, from norms.
pub fn perturbation_constants_from<S: Scalar>(n: &Norms<S>, family: Family) -> ConstantLedger<S> {
    let rr = reference_regularity_from(n);
    let mut led = ConstantLedger { family: Some(family), ..ConstantLedger::default() };
    led.reference_bounds = rr.to_map();
    led.conditions.insert("hypothesis_ref".into(), (rr.hypothesis, rr.hypothesis_holds()));
    match family {
        Family::A => family_a(n, &rr, &mut led),
        Family::B => family_b(n, &rr, &mut led),
        Family::F2 => family_f2(n, &rr, &mut led),
    }
    led
}

/// Constant cascade for `perturbed` against `reference`.
///
/// Fails when the two models differ in anything but the family's operator.
pub fn perturbation_constants<S: Scalar>(
    reference: &MfgModel<S>,
    perturbed: &MfgModel<S>,
    family: Family,
) -> Result<ConstantLedger<S>> {
    check_family(reference, perturbed, family)?;
    Ok(perturbation_constants_from(&Norms::of_pair(reference, perturbed)?, family))
}

/// Checks that `perturbed` equals `reference` outside `family`.
pub fn check_family<S: Scalar>(reference: &MfgModel<S>, perturbed: &MfgModel<S>, family: Family) -> Result<()> {
    if reference.dims() != perturbed.dims() {
        return Err(Error::Family { family: family.to_string(), detail: "dimensions differ".into() });
    }
    let mut masked = perturbed.clone();
    match family {
        Family::A => masked.a = reference.a.clone(),
        Family::B => masked.b = reference.b.clone(),
        Family::F2 => masked.f2 = reference.f2.clone(),
    }
    if masked != *reference {
        let diff = perturbed.rule_difference(reference)?;
        let others: Vec<_> = diff.active_families().into_iter().filter(|f| *f != family).collect();
        let detail = if others.is_empty() {
            "operators outside the rule triple differ".to_string()
        } else {
            format!("rule blocks {others:?} differ")
        };
        return Err(Error::Family { family: family.to_string(), detail });
    }
    Ok(())
}

fn family_a<S: Scalar>(n: &Norms<S>, rr: &ReferenceRegularity<S>, led: &mut ConstantLedger<S>) {
    let c = |x: f64| S::of(x);
    let [r1, r2, r3, _r4, r5] = rr.r;
    let t = n.horizon;
    let (mt, ma) = (n.m_t, n.m_t_pert);
    let mta = ma * mt;
    let bd = n.b_ref;
    let (d, e, trq) = (n.d, n.e, n.tr_q);
    let (f1, f2d, f2) = (n.f1, n.f2_ref, n.f2);
    let gf = n.g * n.f2_hat;
    let (cpi_d, cx_d, cq_d, cxs_d) = (rr.c_pi, rr.c_xbar, rr.c_q, rr.c_x);
    let bpr = bd + r3;

    let cpi_a = pi_uniform_bound_from(ma, t, d, trq, n.g, n.m);
    let gam_d = mt * (c(8.0) * t * mt * mt * d * d * trq).exp();
    let gam_a = ma * (c(8.0) * t * ma * ma * d * d * trq).exp();
    let cpi_aa = (n.m * (t + S::one()) + t * bpr * bpr * cpi_d)
        * (S::one() + cpi_d + cpi_a)
        * c(2.0)
        * c(2.0).sqrt()
        * (gam_d + gam_a)
        * d
        * t.sqrt()
        * gam_d
        * (ma * ma * d * d * t).exp()
        * (t * bpr * bpr
            * (S::one() + r5 * cpi_a)
            * (cpi_d * c(2.0) * mt * ma * (c(8.0) * t * (mt * mt + ma * ma) * d * d * trq).exp()
                + cpi_a * c(2.0).sqrt() * ma * (c(8.0) * t * ma * ma * d * d * trq).exp()))
        .exp()
        * mta;

    let phi_x_a = bd * (bd + r3 + r2 * f2d) * cpi_a + f1;
    let phi_q_a = bd * bd;
    let phi_c_a = r2 * bd * n.sigma * cpi_a;
    let psi_q_a = cpi_a * bpr * bd;
    let psi_x_a = (r1 * cpi_a + cpi_a * cpi_a * bpr * r2) * f2d + cpi_a * f1 + n.m * n.f1_hat;
    let psi_c_a = r1 * cpi_a + cpi_a * cpi_a * bpr * r2;
    let (hyp_a, cx_a, cq_a) = own_bounds(ma, t, phi_x_a, phi_q_a, phi_c_a, psi_q_a, psi_x_a, psi_c_a, gf, n.xi_bar);

    let phi_x_aa = bd * bpr * cpi_a + r2 * cpi_d * bd * f2d + f1;
    let phi_q_aa = bd * bd;
    let phi_pi_aa = bd * r5 * bpr * cpi_d * cx_d
        + bd * bpr * cx_d
        + bd * bd * r3 * cq_d
        + bd * r5 * r2 * (f2d * cx_d + n.sigma) * cpi_d
        + bd * r2 * (f2d * cx_a + n.sigma)
        + f1;
    let psi_x_aa = r1 * f2d * cpi_d + bpr * cpi_a * r2 * f2d * cpi_d + cpi_a * f1 + n.m * n.f1_hat;
    let psi_q_aa = bpr * cpi_a * bd;
    let psi_pi_aa = bpr * bd * cq_d
        + bpr * cpi_a * r5 * bd * cq_d
        + r1 * (f2d * cx_a + n.sigma)
        + bpr * r2 * (f2d * cx_d + n.sigma) * cpi_d
        + bpr * cpi_a * r5 * r2 * (f2d * cx_d + n.sigma) * cpi_d
        + bpr * cpi_a * r2 * (f2 * cx_a + n.sigma)
        + f1 * cx_d;
    let cond_aa = (ma * psi_x_aa * t + ma * gf) * ma * phi_q_aa * t * (ma * (phi_x_aa + psi_q_aa) * t).exp();
    let src_phi = mta * (rr.c_phi_xbar * cx_d + rr.c_phi_q * cq_d + rr.c_phi_c) * t
        + ma * phi_pi_aa * cpi_aa * t
        + mta * n.xi_bar;
    let src_psi = mta * (rr.c_psi_q * cq_d + rr.c_psi_xbar * cx_d + rr.c_psi_c) * t
        + ma * psi_pi_aa * cpi_aa * t
        + mta * cx_d * gf;
    let cx_aa = (S::one() - cond_aa).recip()
        * (src_phi * (ma * phi_x_aa * t).exp()
            + ma * phi_q_aa * t * src_psi * (ma * (phi_x_aa + psi_q_aa) * t).exp());
    let cq_aa = src_psi * (ma * psi_x_aa * t).exp() + (ma * psi_x_aa * t + ma * gf) * (ma * psi_x_aa * t).exp() * cx_aa;

    let cxs_a = state_bound(ma, t, n.xi_m2, bd, e, d, cq_a, cx_a, cpi_a, f1, f2d, n.sigma, r2, r3);
    let xi1_ref = c(3.0) * bd * bd * bpr * bpr * cpi_d * cpi_d * cxs_d * cxs_d
        + c(3.0) * f1 * f1 * cx_d * cx_d
        + c(3.0)
            * bd
            * bd
            * (c(2.0) * bd * bd * cq_d * cq_d
                + c(4.0) * r2 * r2 * (f2d * f2d * cx_d * cx_d + n.sigma * n.sigma) * cpi_d * cpi_d);
    let xi2_ref = c(4.0) * (c(2.0) * d * d + c(2.0) * e * e * bpr * bpr * cpi_d * cpi_d) * cxs_d * cxs_d
        + c(4.0) * f2d * f2d * cx_d * cx_d
        + c(4.0) * n.sigma * n.sigma
        + c(4.0)
            * e
            * e
            * (c(2.0) * bd * bd * cq_d * cq_d
                + c(4.0) * r2 * r2 * (f2d * f2d * cx_d * cx_d + n.sigma * n.sigma) * cpi_d * cpi_d);
    let xi1_x = c(4.0) * (bd * bpr * cpi_d).powi(2);
    let xi2_x = c(4.0) * (e * bpr * cpi_d).powi(2);
    let pi_bracket = c(2.0) * r5 * r5 * bpr * bpr * cpi_d * cpi_d + c(2.0) * bpr * bpr;
    let xi1_pi = c(4.0) * bd * bd * cxs_d * cxs_d * pi_bracket;
    let xi2_pi = c(4.0) * e * e * cxs_d * cxs_d * pi_bracket;
    let xi1_xbar = c(4.0) * (c(2.0) * r2 * r2 * f2d * f2d + c(2.0) * f1 * f1);
    let xi2_xbar = c(4.0) * (c(2.0) * r2 * r2 * f2d * f2d + c(2.0) * f2d * f2d);
    let xi1_q = c(4.0) * bd.powi(4);
    let xi2_q = c(4.0) * e * e * bd * bd;
    let cxs_aa = mta
        * (n.xi_m2
            + t * (xi1_ref + xi2_ref)
            + t * ((xi1_pi + xi2_pi) * cpi_aa + (xi1_xbar + xi2_xbar) * cx_aa + (xi1_q + xi2_q) * cq_aa))
            .sqrt()
        * (t * ma * ma * (xi1_x + xi2_x) / c(2.0)).exp();
    let cu_aa = c(5.0).sqrt()
        * (cpi_aa * cpi_aa
            * (bpr * bpr * (S::one() + r5 * cpi_a).powi(2) * cxs_a * cxs_a
                + r2 * r2 * (f2d * cx_a + n.sigma).powi(2))
            + cxs_aa * cxs_aa * bpr * bpr * cpi_a * cpi_a
            + cx_aa * cx_aa * r2 * r2 * f2d * f2d * cpi_a * cpi_a
            + bd * bd * cq_aa * cq_aa)
            .sqrt();

    for (k, v) in [
        ("M_T^A", ma),
        ("M_T^{A,ref}", mta),
        ("C^Pi_A", cpi_a),
        ("C^Pi_{A,ref}", cpi_aa),
        ("C^Phi,xbar_A", phi_x_a),
        ("C^Phi,q_A", phi_q_a),
        ("C^Phi,c_A", phi_c_a),
        ("C^Psi,q_A", psi_q_a),
        ("C^Psi,xbar_A", psi_x_a),
        ("C^Psi,c_A", psi_c_a),
        ("C^xbar_A", cx_a),
        ("C^q_A", cq_a),
        ("C^x_A", cxs_a),
        ("C^Phi,xbar_{A,ref}", phi_x_aa),
        ("C^Phi,q_{A,ref}", phi_q_aa),
        ("C^Phi,Pi_{A,ref}", phi_pi_aa),
        ("C^Psi,xbar_{A,ref}", psi_x_aa),
        ("C^Psi,q_{A,ref}", psi_q_aa),
        ("C^Psi,Pi_{A,ref}", psi_pi_aa),
        ("C^xbar_{A,ref}", cx_aa),
        ("C^q_{A,ref}", cq_aa),
        ("C^Xi1_ref", xi1_ref),
        ("C^Xi2_ref", xi2_ref),
        ("C^Xi1,x_{A,ref}", xi1_x),
        ("C^Xi2,x_{A,ref}", xi2_x),
        ("C^Xi1,Pi_{A,ref}", xi1_pi),
        ("C^Xi2,Pi_{A,ref}", xi2_pi),
        ("C^Xi1,xbar_{A,ref}", xi1_xbar),
        ("C^Xi2,xbar_{A,ref}", xi2_xbar),
        ("C^Xi1,q_{A,ref}", xi1_q),
        ("C^Xi2,q_{A,ref}", xi2_q),
        ("C^x_{A,ref}", cxs_aa),
        ("C^u_{A,ref}", cu_aa),
    ] {
        led.put(k, v);
    }
    led.cond("small_time_A_own", hyp_a);
    led.cond("small_time_A_diff", cond_aa);
}

fn family_b<S: Scalar>(n: &Norms<S>, rr: &ReferenceRegularity<S>, led: &mut ConstantLedger<S>) {
    let c = |x: f64| S::of(x);
    let [r1, r2, r3, _r4, r5] = rr.r;
    let t = n.horizon;
    let mt = n.m_t;
    let (bd, b) = (n.b_ref, n.b);
    let (d, e, trq) = (n.d, n.e, n.tr_q);
    let (f1, f2d) = (n.f1, n.f2_ref);
    let sig = n.sigma;
    let gf = n.g * n.f2_hat;
    let (cpi_d, cx_d, cq_d, cxs_d) = (rr.c_pi, rr.c_xbar, rr.c_q, rr.c_x);
    let db = n.diff_b;

    let cpi_b = pi_uniform_bound_from(mt, t, d, trq, n.g, n.m);
    let lam = c(2.0).sqrt() * mt * (c(8.0) * t * mt * mt * d * d * trq).exp();
    let pre = t.sqrt() * (c(0.5) * mt * mt * (S::one() + d * d) * t).exp() * lam;
    let post = ((bd + r3 + r5) * t * lam).exp();
    let cpi1 = pre * c(2.0) * (n.m * t + n.g) * post;
    let cpi2 = pre * ((b + bd + c(2.0) * r3) * t * (bd + r3) * cpi_d.powi(3) * db) * post;

    let phi_x_b = b * (b + r3 + r2 * f2d) * cpi_b + f1;
    let phi_q_b = b * b;
    let phi_c_b = r2 * b * sig * cpi_d;
    let psi_q_b = cpi_b * (b + r3) * b;
    let psi_x_b = (r1 * cpi_b + cpi_b * cpi_b * (b + r3) * r2) * f2d + cpi_b * f1 + n.m * n.f1_hat;
    let psi_c_b = r1 * cpi_b + cpi_b * cpi_b * (b + r3) * r2;
    let (hyp_b, cx_b, cq_b) = own_bounds(mt, t, phi_x_b, phi_q_b, phi_c_b, psi_q_b, psi_x_b, psi_c_b, gf, n.xi_bar);

    let fxs_d = f2d * cx_d + sig;
    let phi_x_bb = b * (b + r3) * cpi_b + b * r2 * f2d * cpi_d + f1;
    let phi_q_bb = b * b;
    let phi_pi_bb = b * (r5 + b + r3) * cx_b + b * r2 * (f2d * cx_b + sig);
    let phi_c_bb = (bd + r3) * cpi_d * cx_d + b * cpi_d * cx_d + (b + bd) * cq_d + r2 * (fxs_d * cpi_d);
    let psi_x_bb = r1 * f2d * cpi_d + (b + r3) * r2 * f2d * cpi_d + (cpi_b * f1 + n.m * n.f1_hat);
    let psi_q_bb = (b + r3) * cpi_b * b;
    let psi_pi_bb = (b + r3) * bd * cq_d
        + (b + r3) * cpi_b * r5 * bd * cq_d
        + r1 * fxs_d
        + (b + r3) * r2 * fxs_d
        + (b + r3) * cpi_b * r5 * r2 * fxs_d * cpi_d
        + (b + r3) * cpi_b * r2 * (f2d * cx_b + sig)
        + f1 * cx_d;
    let psi_c_bb = cpi_d * bd * cq_d + (b + r3) * cpi_d * cq_d + cpi_d * r2 * fxs_d * cpi_d;
    let cond_bb = (mt * psi_x_bb * t + mt * gf) * mt * phi_q_bb * t * (mt * (phi_x_bb + psi_q_bb) * t).exp();
    let inv = (S::one() - cond_bb).recip();
    let e_phi = (mt * phi_x_bb * t).exp();
    let e_both = (mt * (phi_x_bb + psi_q_bb) * t).exp();
    let e_psi = (mt * psi_q_bb * t).exp();
    let cx1 = inv
        * (mt * (phi_pi_bb * cpi1 + phi_c_bb) * t * e_phi
            + mt * phi_q_bb * t * mt * (psi_pi_bb * cpi1 + psi_c_bb) * t * e_both);
    let cx2 = inv * (mt * (phi_pi_bb * cpi2) * t * e_phi + mt * phi_q_bb * t * mt * (psi_pi_bb * cpi2) * t * e_both);
    let cq1 = mt * (psi_pi_bb * cpi1 + psi_c_bb) * t * e_psi + (mt * psi_x_bb * t + mt * gf) * e_psi * cx1;
    let cq2 = mt * (psi_pi_bb * cpi2) * t * e_psi + (mt * psi_x_bb * t + mt * gf) * e_psi * cx2;

    let cxs_b = state_bound(mt, t, n.xi_m2, b, e, d, cq_b, cx_b, cpi_d, f1, f2d, sig, r2, r3);
    let xi1_x = c(5.0) * ((b + r3) * cpi_d).powi(2);
    let xi1_pi = c(5.0)
        * (b * r5 * (bd + r3) * cpi_d * cxs_d
            + b * (b + r3) * cxs_d
            + b * r5 * bd * cq_d
            + b * r2 * (f2d * cx_b + sig))
            .powi(2);
    let xi1_xbar = c(5.0) * (b * r2 * f2d * cpi_d + f1).powi(2);
    let xi1_q = c(5.0) * b.powi(4);
    let xi1_c = c(5.0)
        * ((bd + r3) * cpi_d * cxs_d
            + b * r5 * (bd + r3) * cpi_d * cxs_d
            + b * b * cxs_d
            + bd * cq_d
            + b * r5 * bd * cq_d
            + b * cq_d
            + r2 * fxs_d * cpi_d)
            .powi(2);
    let xi2_x = c(5.0) * (d + e * (bd + r3)).powi(2);
    let xi2_pi = c(5.0)
        * (e * r5 * (bd + r3) * cpi_d * cxs_d
            + e * (b + r3) * cxs_d
            + e * r5 * bd * cq_d
            + e * r5 * r2 * fxs_d * cpi_d
            + e * r2 * fxs_d)
            .powi(2);
    let xi2_xbar = c(5.0) * (b * r2 * f2d * cpi_d).powi(2);
    let xi2_q = c(5.0) * (e * b).powi(2);
    let xi2_c = c(5.0) * (e * cpi_d * cxs_d + e * cq_d).powi(2);
    let growth = (t * mt * mt * (xi1_x + xi2_x) / c(2.0)).exp();
    let lead = t.sqrt() * mt * c(3.0).sqrt();
    let cxs1 = lead
        * ((xi1_xbar + xi2_xbar).sqrt() * cx1 + (xi1_q + xi2_q).sqrt() * cq1 + (xi1_c + xi2_c).sqrt())
        * growth;
    let cxs2 = lead * ((xi1_xbar + xi2_xbar).sqrt() * cx2 + (xi1_q + xi2_q).sqrt() * cq2) * growth;
    let cu1 = c(6.0)
        * ((bd + r3) * (S::one() + r5 * cpi_b) * cxs_d + c(6.0) * r2 * (f2d * cx_b + sig))
        * cpi1
        + c(6.0) * (bd + r3) * cpi_b * cxs1
        + c(6.0) * r2 * f2d * cpi_d * cx1
        + c(6.0) * cq_d
        + c(6.0) * b * cq1;
    let cu2 = c(6.0) * ((bd + r3) * (S::one() + r5 * cpi_b) * cxs_d + r2 * (f2d * cx_b + sig)) * cpi2
        + c(6.0) * (bd + r3) * cpi_b * cxs2
        + c(6.0) * r2 * f2d * cpi_d * cx2
        + c(6.0) * b * cq2;

    for (k, v) in [
        ("C^Pi_B", cpi_b),
        ("C^Pi,1_{B,ref}", cpi1),
        ("C^Pi,2_{B,ref}", cpi2),
        ("C^Phi,xbar_B", phi_x_b),
        ("C^Phi,q_B", phi_q_b),
        ("C^Phi,c_B", phi_c_b),
        ("C^Psi,q_B", psi_q_b),
        ("C^Psi,xbar_B", psi_x_b),
        ("C^Psi,c_B", psi_c_b),
        ("C^xbar_B", cx_b),
        ("C^q_B", cq_b),
        ("C^x_B", cxs_b),
        ("C^Phi,xbar_{B,ref}", phi_x_bb),
        ("C^Phi,q_{B,ref}", phi_q_bb),
        ("C^Phi,Pi_{B,ref}", phi_pi_bb),
        ("C^Phi,c_{B,ref}", phi_c_bb),
        ("C^Psi,xbar_{B,ref}", psi_x_bb),
        ("C^Psi,q_{B,ref}", psi_q_bb),
        ("C^Psi,Pi_{B,ref}", psi_pi_bb),
        ("C^Psi,c_{B,ref}", psi_c_bb),
        ("C^xbar,1_{B,ref}", cx1),
        ("C^xbar,2_{B,ref}", cx2),
        ("C^q,1_{B,ref}", cq1),
        ("C^q,2_{B,ref}", cq2),
        ("C^Xi1,x_{B,ref}", xi1_x),
        ("C^Xi1,Pi_{B,ref}", xi1_pi),
        ("C^Xi1,xbar_{B,ref}", xi1_xbar),
        ("C^Xi1,q_{B,ref}", xi1_q),
        ("C^Xi1,c_{B,ref}", xi1_c),
        ("C^Xi2,x_{B,ref}", xi2_x),
        ("C^Xi2,Pi_{B,ref}", xi2_pi),
        ("C^Xi2,xbar_{B,ref}", xi2_xbar),
        ("C^Xi2,q_{B,ref}", xi2_q),
        ("C^Xi2,c_{B,ref}", xi2_c),
        ("C^x,1_{B,ref}", cxs1),
        ("C^x,2_{B,ref}", cxs2),
        ("C^u,1_{B,ref}", cu1),
        ("C^u,2_{B,ref}", cu2),
    ] {
        led.put(k, v);
    }
    led.cond("small_time_B_own", hyp_b);
    led.cond("small_time_B_diff", cond_bb);
}

fn family_f2<S: Scalar>(n: &Norms<S>, rr: &ReferenceRegularity<S>, led: &mut ConstantLedger<S>) {
    let c = |x: f64| S::of(x);
    let [r1, r2, r3, _r4, _r5] = rr.r;
    let t = n.horizon;
    let mt = n.m_t;
    let bd = n.b_ref;
    let (d, e) = (n.d, n.e);
    let (f1, f2d, f2) = (n.f1, n.f2_ref, n.f2);
    let sig = n.sigma;
    let gf = n.g * n.f2_hat;
    let (cpi_d, cx_d) = (rr.c_pi, rr.c_xbar);
    let bpr = bd + r3;

    let phi_x_ff = bd * bpr * cpi_d + f1 + bd * r2 * f2 * cpi_d;
    let phi_q_ff = bd;
    let phi_c_ff = r2 * bd * cx_d;
    let psi_x_ff = r1 * f2 * cpi_d + bpr * cpi_d * r2 * f2 * cpi_d + (cpi_d * f1 + n.m * n.f1_hat);
    let psi_q_ff = bpr * cpi_d * bd;
    let psi_c_ff = bpr * cpi_d * r2 * cx_d * cpi_d;
    let cond_ff = (mt * psi_x_ff * t + mt * gf) * mt * phi_q_ff * t * (mt * (phi_x_ff + psi_q_ff) * t).exp();
    let cx_ff = (S::one() - cond_ff).recip()
        * ((mt * phi_c_ff * t) * (mt * psi_q_ff * t).exp()
            + mt * phi_q_ff * t * (mt * psi_c_ff * t) * (mt * (phi_x_ff + psi_q_ff) * t).exp());
    let cq_ff = (mt * psi_c_ff * t) * (mt * (phi_x_ff + psi_q_ff) * t).exp()
        + (mt * psi_x_ff * t + mt * gf) * (mt * psi_q_ff * t).exp() * cx_ff;

    let phi_x_f = bd * (bd + r3 + r2 * f2) * cpi_d + f1;
    let phi_q_f = bd * bd;
    let phi_c_f = bd * r2 * sig * cpi_d;
    let psi_q_f = cpi_d * bpr * bd;
    let psi_x_f = (r1 * cpi_d + cpi_d * cpi_d * bpr * r2) * f2 + cpi_d * f1 + n.m * n.f1_hat;
    let psi_c_f = r1 * cpi_d + cpi_d * cpi_d * bpr * r2;
    let (hyp_f, cx_f, cq_f) = own_bounds(mt, t, phi_x_f, phi_q_f, phi_c_f, psi_q_f, psi_x_f, psi_c_f, gf, n.xi_bar);
    let cxs_f = state_bound(mt, t, n.xi_m2, bd, e, d, cq_f, cx_f, cpi_d, f1, f2, sig, r2, r3);

    let xi1_x = bd * bd * bpr * bpr * cpi_d * cpi_d;
    let xi1_xbar = bd * bd * r2 * r2 * f2 * f2;
    let xi1_q = bd.powi(4);
    let xi1_c = bd * bd * (r2 * cx_d * cpi_d).powi(2);
    let xi2_x = (d + e * bpr * cpi_d).powi(2);
    let xi2_xbar = f2 * f2 + (r2 * e * f2d * cpi_d).powi(2);
    let xi2_q = e * e * bd * bd;
    let xi2_c = e * e * (r2 * cx_d * cpi_d).powi(2);
    let cxs_ff = t.sqrt()
        * mt
        * ((xi1_q + xi2_q) * cq_ff + (xi1_xbar + xi2_xbar) * cx_ff + xi1_c + xi2_c).sqrt()
        * (t * mt * mt * (xi1_x + xi2_x) / c(2.0)).exp();
    let cu_ff =
        c(6.0).sqrt() * (bpr * cxs_ff + r2 * cpi_d * (cx_d * cx_d + f2 * f2 * cx_ff * cx_ff) + bd * cq_ff).sqrt();

    for (k, v) in [
        ("C^Phi,xbar_{F2,ref}", phi_x_ff),
        ("C^Phi,q_{F2,ref}", phi_q_ff),
        ("C^Phi,c_{F2,ref}", phi_c_ff),
        ("C^Psi,xbar_{F2,ref}", psi_x_ff),
        ("C^Psi,q_{F2,ref}", psi_q_ff),
        ("C^Psi,c_{F2,ref}", psi_c_ff),
        ("C^xbar_{F2,ref}", cx_ff),
        ("C^q_{F2,ref}", cq_ff),
        ("C^Phi,xbar_F2", phi_x_f),
        ("C^Phi,q_F2", phi_q_f),
        ("C^Phi,c_F2", phi_c_f),
        ("C^Psi,q_F2", psi_q_f),
        ("C^Psi,xbar_F2", psi_x_f),
        ("C^Psi,c_F2", psi_c_f),
        ("C^xbar_F2", cx_f),
        ("C^q_F2", cq_f),
        ("C^x_F2", cxs_f),
        ("C^Xi1,x_{F2,ref}", xi1_x),
        ("C^Xi1,xbar_{F2,ref}", xi1_xbar),
        ("C^Xi1,q_{F2,ref}", xi1_q),
        ("C^Xi1,c_{F2,ref}", xi1_c),
        ("C^Xi2,x_{F2,ref}", xi2_x),
        ("C^Xi2,xbar_{F2,ref}", xi2_xbar),
        ("C^Xi2,q_{F2,ref}", xi2_q),
        ("C^Xi2,c_{F2,ref}", xi2_c),
        ("C^x_{F2,ref}", cxs_ff),
        ("C^u_{F2,ref}", cu_ff),
    ] {
        led.put(k, v);
    }
    led.cond("small_time_F2_own", hyp_f);
    led.cond("small_time_F2_diff", cond_ff);
    led.assertions.push("Pi^F2 = Pi^ref: the Riccati equation has no F2 term".into());
}

/// Theoretical bounds on the sweep deltas for a perturbation of operator
/// norm `size`; keys `dPi`, `dxbar`, `dq`, `dx`, `du`.
pub fn theory_bounds<S: Scalar>(led: &ConstantLedger<S>, size: S) -> BTreeMap<String, S> {
    let mut out = BTreeMap::new();
    let get = |k: &str| led.get(k).unwrap_or_else(S::nan);
    match led.family {
        Some(Family::A) => {
            for (col, key) in [
                ("dPi", "C^Pi_{A,ref}"),
                ("dxbar", "C^xbar_{A,ref}"),
                ("dq", "C^q_{A,ref}"),
                ("dx", "C^x_{A,ref}"),
                ("du", "C^u_{A,ref}"),
            ] {
                out.insert(col.to_string(), get(key) * size);
            }
        }
        Some(Family::B) => {
            for (col, k1, k2) in [
                ("dPi", "C^Pi,1_{B,ref}", "C^Pi,2_{B,ref}"),
                ("dxbar", "C^xbar,1_{B,ref}", "C^xbar,2_{B,ref}"),
                ("dq", "C^q,1_{B,ref}", "C^q,2_{B,ref}"),
                ("dx", "C^x,1_{B,ref}", "C^x,2_{B,ref}"),
                ("du", "C^u,1_{B,ref}", "C^u,2_{B,ref}"),
            ] {
                out.insert(col.to_string(), get(k1) * size + get(k2) * size * size);
            }
        }
        Some(Family::F2) => {
            out.insert("dPi".to_string(), S::zero());
            for (col, key) in [
                ("dxbar", "C^xbar_{F2,ref}"),
                ("dq", "C^q_{F2,ref}"),
                ("dx", "C^x_{F2,ref}"),
                ("du", "C^u_{F2,ref}"),
            ] {
                out.insert(col.to_string(), get(key) * size);
            }
        }
        None => {}
    }
    out
}

/// Inputs of the coupled forward-backward Gronwall inequality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct FbGronwallInputs<S: Scalar> {
    pub a_f: S,
    pub b_f: S,
    pub c_f: S,
    pub d_f: S,
    pub a_g: S,
    pub b_g: S,
    pub c_g: S,
    pub d_g: S,
    pub d_gf: S,
    pub horizon: S,
}

/// Sup bounds on `f` and `g` plus the condition value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FbGronwallBounds<S: Scalar> {
    pub f_bound: S,
    pub g_bound: S,
    pub condition: S,
}

/// Closed-form bounds for the coupled forward-backward integral inequalities.
pub fn fb_gronwall_bounds<S: Scalar>(p: &FbGronwallInputs<S>) -> Result<FbGronwallBounds<S>> {
    let vals = [p.a_f, p.b_f, p.c_f, p.d_f, p.a_g, p.b_g, p.c_g, p.d_g, p.d_gf, p.horizon];
    if vals.iter().any(|&v| !(v >= S::zero()) || !v.is_finite()) {
        return Err(Error::Domain("Gronwall inputs must be finite and nonnegative".into()));
    }
    let t = p.horizon;
    let condition = (p.b_g * t + p.d_gf) * p.b_f * t * ((p.a_f + p.a_g) * t).exp();
    if condition >= S::one() {
        return Err(Error::ContractionViolated(condition.to_f64_lossy()));
    }
    let f_bound = (S::one() - condition).recip()
        * ((p.c_f * t + p.d_f) * (p.a_f * t).exp() + p.b_f * t * (p.c_g * t + p.d_g) * ((p.a_f + p.a_g) * t).exp());
    let g_bound = (p.c_g * t + p.d_g) * (p.a_g * t).exp() + (p.b_g * t + p.d_gf) * (p.a_g * t).exp() * f_bound;
    Ok(FbGronwallBounds { f_bound, g_bound, condition })
}

/// Well-posedness contraction report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ContractionReport<S: Scalar> {
    pub c1: S,
    pub c2: S,
    pub c3: S,
    pub c4: S,
    /// `C4 exp(T M_T ||B|| C1 (||B|| + R3))`.
    pub value: S,
    pub pass: bool,
    /// Solved `sup_t ||Pi(t)||`, when a Riccati solution was supplied.
    pub pi_sup: Option<S>,
}

/// Contraction condition from norms of a single model (`b`, `f2`, `m_t`).
pub fn contraction_from<S: Scalar>(n: &Norms<S>) -> ContractionReport<S> {
    let (r1, r2, r3, _, _) = n.riesz();
    let t = n.horizon;
    let mt = n.m_t;
    let b = n.b;
    let r6 = b + r3;
    let c1 = pi_uniform_bound_from(mt, t, n.d, n.tr_q, n.g, n.m);
    let c3 = c1 * r6 * b;
    let c2 = c1 * (r1 * n.f2 + c1 * r6 * r2 * n.f2 + n.f1) + n.m * n.f1_hat;
    let c4 = t * mt * (mt * b * b * (t * c2 + n.g * n.f2_hat) * (mt * t * c3).exp() + c1 * r2 * b * n.f2 + n.f1);
    let value = c4 * (t * mt * b * c1 * (b + r3)).exp();
    ContractionReport { c1, c2, c3, c4, value, pass: value < S::one(), pi_sup: None }
}

/// Contraction condition for `model`, with the solved `sup ||Pi||` attached.
pub fn contraction_check<S: Scalar>(
    model: &MfgModel<S>,
    ric: Option<&crate::riccati::RiccatiSolution<S>>,
) -> Result<ContractionReport<S>> {
    let mut rep = contraction_from(&Norms::of_model(model)?);
    rep.pi_sup = ric.map(|r| r.sup_op_norm());
    Ok(rep)
}

/// Settings of a perturbation sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub consistency: ConsistencyOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { steps: 200, n_paths: 1000, seed: 0, consistency: ConsistencyOptions::default() }
    }
}

/// One sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SweepRow<S: Scalar> {
    pub scale: S,
    /// `None` when every solve succeeded, otherwise the failure message.
    pub failure: Option<String>,
    pub deltas: BTreeMap<String, S>,
    pub stderr: BTreeMap<String, S>,
    pub ratios: BTreeMap<String, S>,
    pub theory: BTreeMap<String, S>,
}

/// Empirical deltas along `scale * direction` with their theoretical bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SweepResult<S: Scalar> {
    pub family: Family,
    /// Operator norm of the direction in its family.
    pub direction_norm: S,
    /// Hilbert-Schmidt norm of the direction in its family.
    pub direction_hs_norm: S,
    pub scales: Vec<S>,
    pub rows: Vec<SweepRow<S>>,
    pub ledger: Option<ConstantLedger<S>>,
}

/// Delta column names in output order.
pub const SWEEP_COLUMNS: [&str; 5] = ["dPi", "dxbar", "dq", "dx", "du"];

/// Solves the game along `model + t_k direction` with common random numbers.
pub fn perturbation_sweep<S: Scalar>(
    model: &MfgModel<S>,
    direction: &RulePerturbation<S>,
    scales: &[S],
    opts: &SweepOptions,
) -> Result<SweepResult<S>> {
    model.validate()?;
    let fams = direction.active_families();
    if fams.len() != 1 {
        return Err(Error::Invalid(format!("direction must be nonzero in exactly one family, got {fams:?}")));
    }
    let family = fams[0];
    if scales.iter().any(|s| !(*s >= S::zero()) || !s.is_finite()) {
        return Err(Error::Invalid("sweep scales must be finite and nonnegative".into()));
    }
    if scales.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Invalid("sweep scales must be strictly increasing".into()));
    }
    let fi = family_index(family);
    let direction_norm = direction.op_norms()[fi];
    let direction_hs_norm = direction.hs_norms()[fi];
    let base = solve_equilibrium(model, opts.steps, &opts.consistency)?;
    let base_paths = simulate_paths(model, &base, opts.n_paths, opts.seed)?;
    let ledger = match scales.last() {
        Some(&t) if t > S::zero() => {
            let pert = model.with_perturbation(&direction.scale(t))?;
            Some(perturbation_constants(model, &pert, family)?)
        }
        _ => None,
    };
    let rows = scales
        .par_iter()
        .map(|&t| {
            let mut row = SweepRow {
                scale: t,
                failure: None,
                deltas: BTreeMap::new(),
                stderr: BTreeMap::new(),
                ratios: BTreeMap::new(),
                theory: ledger.as_ref().map(|l| theory_bounds(l, t * direction_norm)).unwrap_or_default(),
            };
            match sweep_point(model, direction, t, opts, &base, &base_paths) {
                Ok((deltas, stderr)) => {
                    let denom = t * direction_norm;
                    for (k, v) in &deltas {
                        let r = if denom > S::zero() { *v / denom } else { S::zero() };
                        row.ratios.insert(k.clone(), r);
                    }
                    row.deltas = deltas;
                    row.stderr = stderr;
                }
                Err(e) => row.failure = Some(e.to_string()),
            }
            row
        })
        .collect();
    Ok(SweepResult { family, direction_norm, direction_hs_norm, scales: scales.to_vec(), rows, ledger })
}

type DeltaMaps<S> = (BTreeMap<String, S>, BTreeMap<String, S>);

fn sweep_point<S: Scalar>(
    model: &MfgModel<S>,
    direction: &RulePerturbation<S>,
    t: S,
    opts: &SweepOptions,
    base: &EquilibriumSolution<S>,
    base_paths: &PathBundle<S>,
) -> Result<DeltaMaps<S>> {
    let pert = model.with_perturbation(&direction.scale(t))?;
    let eq = solve_equilibrium(&pert, opts.steps, &opts.consistency)?;
    let paths = simulate_paths(&pert, &eq, opts.n_paths, opts.seed)?;
    let sup_vec = |a: &[Vec<S>], b: &[Vec<S>]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| crate::scalar::norm2(&crate::scalar::sub_vec(x, y)))
            .fold(S::zero(), S::max)
    };
    let d_pi = eq
        .riccati
        .pi
        .iter()
        .zip(&base.riccati.pi)
        .map(|(p, q)| spectral_norm(&p.axpy(-S::one(), q)))
        .fold(S::zero(), S::max);
    let mom = paired_moments(&paths, base_paths)?;
    let mut deltas = BTreeMap::new();
    for (k, v) in [
        ("dPi", d_pi),
        ("dxbar", sup_vec(&eq.xbar, &base.xbar)),
        ("dq", sup_vec(&eq.q, &base.q)),
        ("dx", mom.dx),
        ("du", mom.du),
    ] {
        deltas.insert(k.to_string(), v);
    }
    let mut stderr = BTreeMap::new();
    stderr.insert("dx".to_string(), mom.dx_stderr);
    stderr.insert("du".to_string(), mom.du_stderr);
    Ok((deltas, stderr))
}

fn family_index(f: Family) -> usize {
    match f {
        Family::A => 0,
        Family::B => 1,
        Family::F2 => 2,
    }
}
