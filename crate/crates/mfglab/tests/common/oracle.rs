//! Second transcription of the stability constants, written from the formulas
//! directly with one local per symbol and no shared helpers.

use std::collections::BTreeMap;

use mfglab::model::Family;
use mfglab::stability::Norms;

pub type Named = BTreeMap<String, f64>;

/// Constants and condition values for one family.
pub struct OracleLedger {
    pub reference: Named,
    pub constants: Named,
    pub conditions: Named,
}

fn put(m: &mut Named, k: &str, v: f64) {
    m.insert(k.to_string(), v);
}

/// Reference-model bounds keyed like the library ledger.
pub fn reference(n: &Norms<f64>) -> Named {
    let t = n.horizon;
    let mt = n.m_t;
    let bd = n.b_ref;
    let r1 = n.tr_q * n.d;
    let r2 = n.tr_q * n.e;
    let r3 = n.tr_q * n.d * n.e;
    let r4 = n.tr_q * n.d * n.d;
    let r5 = n.tr_q * n.e * n.e;

    let c_pi = 2.0 * mt.powi(2) * (8.0 * t * mt.powi(2) * n.d.powi(2) * n.tr_q).exp() * (n.g + t * n.m);

    let c_phi_xbar = bd * (bd + r3 + r2 * n.f2_ref) * c_pi + n.f1;
    let c_phi_q = bd.powi(2);
    let c_phi_c = bd * r2 * n.sigma * c_pi;
    let c_psi_q = c_pi * (bd + r3) * bd;
    let c_psi_xbar = (r1 * c_pi + c_pi.powi(2) * (bd + r3) * r2) * n.f2_ref + c_pi * n.f1 + n.m * n.f1_hat;
    let c_psi_c = r1 * c_pi + c_pi.powi(2) * (bd + r3) * r2;

    let hyp = mt * (c_psi_xbar * t + n.g * n.f2_hat);
    let c_xbar = 1.0 / (1.0 - hyp)
        * (mt * (c_phi_c * t + n.xi_bar) * (mt * c_phi_xbar * t).exp()
            + mt * c_phi_q * t * (mt * c_psi_c * t) * (mt * (c_phi_xbar + c_psi_q) * t).exp());
    let c_q = mt * c_psi_c * t * (mt * c_psi_q * t).exp()
        + mt * (c_psi_xbar * t + n.g * n.f2_hat) * (mt * c_psi_q * t).exp() * c_xbar;

    let brace = 3.0 * mt.powi(2) * n.xi_m2
        + 3.0 * t * mt.powi(2) * ((bd.powi(2) + n.e.powi(2)) * (bd * c_q + r2 * (n.f2_ref * c_xbar + n.sigma) * c_pi))
        + 3.0 * t * mt.powi(2) * (n.f1.powi(2) + n.f2_ref.powi(2)) * c_xbar.powi(2)
        + 3.0 * t * mt.powi(2) * n.sigma.powi(2);
    let c_x = brace.sqrt()
        * (mt.powi(2) * ((bd.powi(2) + n.e.powi(2)) * ((bd + r3) * c_pi).powi(2) + n.d.powi(2)) * 3.0 * t / 2.0).exp();

    let mut m = Named::new();
    for (k, v) in [
        ("M_T", mt),
        ("R1", r1),
        ("R2", r2),
        ("R3", r3),
        ("R4", r4),
        ("R5", r5),
        ("C^Pi_ref", c_pi),
        ("C^Phi,xbar_ref", c_phi_xbar),
        ("C^Phi,q_ref", c_phi_q),
        ("C^Phi,c_ref", c_phi_c),
        ("C^Psi,q_ref", c_psi_q),
        ("C^Psi,xbar_ref", c_psi_xbar),
        ("C^Psi,c_ref", c_psi_c),
        ("C^xbar_ref", c_xbar),
        ("C^q_ref", c_q),
        ("C^x_ref", c_x),
        ("hypothesis_ref", hyp),
    ] {
        put(&mut m, k, v);
    }
    m
}

/// All constants of one family.
pub fn family(n: &Norms<f64>, fam: Family) -> OracleLedger {
    let reference = reference(n);
    let mut constants = Named::new();
    let mut conditions = Named::new();
    put(&mut conditions, "hypothesis_ref", reference["hypothesis_ref"]);
    match fam {
        Family::A => family_a(n, &reference, &mut constants, &mut conditions),
        Family::B => family_b(n, &reference, &mut constants, &mut conditions),
        Family::F2 => family_f2(n, &reference, &mut constants, &mut conditions),
    }
    OracleLedger { reference, constants, conditions }
}

fn family_a(n: &Norms<f64>, rf: &Named, out: &mut Named, cond: &mut Named) {
    let t = n.horizon;
    let (r1, r2, r3, r5) = (rf["R1"], rf["R2"], rf["R3"], rf["R5"]);
    let m_dag = n.m_t;
    let m_a = n.m_t_pert;
    let m_aa = m_a * m_dag;
    let bd = n.b_ref;
    let f2d = n.f2_ref;
    let (cpid, cxbd, cqd, cxd) = (rf["C^Pi_ref"], rf["C^xbar_ref"], rf["C^q_ref"], rf["C^x_ref"]);
    let gf = n.g * n.f2_hat;
    let dq = n.d.powi(2) * n.tr_q;

    let cpi_a = 2.0 * m_a.powi(2) * (8.0 * t * m_a.powi(2) * dq).exp() * (n.g + t * n.m);
    let ex_d = m_dag * (8.0 * t * m_dag.powi(2) * dq).exp();
    let ex_a = m_a * (8.0 * t * m_a.powi(2) * dq).exp();
    let cpi_aa = (n.m * (t + 1.0) + t * (bd + r3).powi(2) * cpid)
        * (1.0 + cpid + cpi_a)
        * 2.0
        * 2f64.sqrt()
        * (ex_d + ex_a)
        * n.d
        * t.sqrt()
        * ex_d
        * (m_a.powi(2) * n.d.powi(2) * t).exp()
        * (t * (bd + r3).powi(2)
            * (1.0 + r5 * cpi_a)
            * (cpid * 2.0 * m_dag * m_a * (8.0 * t * (m_dag.powi(2) + m_a.powi(2)) * dq).exp()
                + cpi_a * 2f64.sqrt() * m_a * (8.0 * t * m_a.powi(2) * dq).exp()))
        .exp()
        * m_aa;

    // Perturbed-model bounds: the reference lemma with A in place of the reference generator.
    let phx_a = bd * (bd + r3 + r2 * f2d) * cpi_a + n.f1;
    let phq_a = bd.powi(2);
    let phc_a = r2 * bd * n.sigma * cpi_a;
    let psq_a = cpi_a * (bd + r3) * bd;
    let psx_a = (r1 * cpi_a + cpi_a.powi(2) * (bd + r3) * r2) * f2d + cpi_a * n.f1 + n.m * n.f1_hat;
    let psc_a = r1 * cpi_a + cpi_a.powi(2) * (bd + r3) * r2;
    let own_a = m_a * (psx_a * t + gf);
    let cxb_a = 1.0 / (1.0 - own_a)
        * (m_a * (phc_a * t + n.xi_bar) * (m_a * phx_a * t).exp()
            + m_a * phq_a * t * (m_a * psc_a * t) * (m_a * (phx_a + psq_a) * t).exp());
    let cq_a = m_a * psc_a * t * (m_a * psq_a * t).exp() + m_a * (psx_a * t + gf) * (m_a * psq_a * t).exp() * cxb_a;
    let cx_a = (3.0 * m_a.powi(2) * n.xi_m2
        + 3.0 * t * m_a.powi(2) * ((bd.powi(2) + n.e.powi(2)) * (bd * cq_a + r2 * (f2d * cxb_a + n.sigma) * cpi_a))
        + 3.0 * t * m_a.powi(2) * (n.f1.powi(2) + f2d.powi(2)) * cxb_a.powi(2)
        + 3.0 * t * m_a.powi(2) * n.sigma.powi(2))
    .sqrt()
        * (m_a.powi(2) * ((bd.powi(2) + n.e.powi(2)) * ((bd + r3) * cpi_a).powi(2) + n.d.powi(2)) * 3.0 * t / 2.0)
            .exp();

    let phx_aa = bd * (bd + r3) * cpi_a + r2 * cpid * bd * f2d + n.f1;
    let phq_aa = bd.powi(2);
    let phpi_aa = bd * r5 * (bd + r3) * cpid * cxbd
        + bd * (bd + r3) * cxbd
        + bd.powi(2) * r3 * cqd
        + bd * r5 * r2 * (f2d * cxbd + n.sigma) * cpid
        + bd * r2 * (f2d * cxb_a + n.sigma)
        + n.f1;
    let psx_aa = r1 * f2d * cpid + (bd + r3) * cpi_a * r2 * f2d * cpid + cpi_a * n.f1 + n.m * n.f1_hat;
    let psq_aa = (bd + r3) * cpi_a * bd;
    let pspi_aa = (bd + r3) * bd * cqd
        + (bd + r3) * cpi_a * r5 * bd * cqd
        + r1 * (f2d * cxb_a + n.sigma)
        + (bd + r3) * r2 * (f2d * cxbd + n.sigma) * cpid
        + (bd + r3) * cpi_a * r5 * r2 * (f2d * cxbd + n.sigma) * cpid
        + (bd + r3) * cpi_a * r2 * (n.f2 * cxb_a + n.sigma)
        + n.f1 * cxbd;

    let small = (m_a * psx_aa * t + m_a * gf) * m_a * phq_aa * t * (m_a * (phx_aa + psq_aa) * t).exp();
    let bracket_phi = m_aa * (rf["C^Phi,xbar_ref"] * cxbd + rf["C^Phi,q_ref"] * cqd + rf["C^Phi,c_ref"]) * t
        + m_a * phpi_aa * cpi_aa * t
        + m_aa * n.xi_bar;
    let bracket_psi = m_aa * (rf["C^Psi,q_ref"] * cqd + rf["C^Psi,xbar_ref"] * cxbd + rf["C^Psi,c_ref"]) * t
        + m_a * pspi_aa * cpi_aa * t
        + m_aa * cxbd * n.g * n.f2_hat;
    let cxb_aa = (1.0 - small).recip()
        * (bracket_phi * (m_a * phx_aa * t).exp()
            + m_a * phq_aa * t * bracket_psi * (m_a * (phx_aa + psq_aa) * t).exp());
    let cq_aa = bracket_psi * (m_a * psx_aa * t).exp() + (m_a * psx_aa * t + m_a * gf) * (m_a * psx_aa * t).exp() * cxb_aa;

    let s2 = n.sigma.powi(2);
    let xi1d = 3.0 * bd.powi(2) * (bd + r3).powi(2) * cpid.powi(2) * cxd.powi(2)
        + 3.0 * n.f1.powi(2) * cxbd.powi(2)
        + 3.0 * bd.powi(2) * (2.0 * bd.powi(2) * cqd.powi(2) + 4.0 * r2.powi(2) * (f2d.powi(2) * cxbd.powi(2) + s2) * cpid.powi(2));
    let xi2d = 4.0 * (2.0 * n.d.powi(2) + 2.0 * n.e.powi(2) * (bd + r3).powi(2) * cpid.powi(2)) * cxd.powi(2)
        + 4.0 * f2d.powi(2) * cxbd.powi(2)
        + 4.0 * s2
        + 4.0 * n.e.powi(2) * (2.0 * bd.powi(2) * cqd.powi(2) + 4.0 * r2.powi(2) * (f2d.powi(2) * cxbd.powi(2) + s2) * cpid.powi(2));
    let xi1x = 4.0 * (bd * (bd + r3) * cpid).powi(2);
    let xi2x = 4.0 * (n.e * (bd + r3) * cpid).powi(2);
    let xi1pi = 4.0 * bd.powi(2) * cxd.powi(2) * (2.0 * r5.powi(2) * (bd + r3).powi(2) * cpid.powi(2) + 2.0 * (bd + r3).powi(2));
    let xi2pi = 4.0 * n.e.powi(2) * cxd.powi(2) * (2.0 * r5.powi(2) * (bd + r3).powi(2) * cpid.powi(2) + 2.0 * (bd + r3).powi(2));
    let xi1xb = 4.0 * (2.0 * r2.powi(2) * f2d.powi(2) + 2.0 * n.f1.powi(2));
    let xi2xb = 4.0 * (2.0 * r2.powi(2) * f2d.powi(2) + 2.0 * f2d.powi(2));
    let xi1q = 4.0 * bd.powi(4);
    let xi2q = 4.0 * n.e.powi(2) * bd.powi(2);
    let cx_aa = m_aa
        * (n.xi_m2
            + t * (xi1d + xi2d)
            + t * ((xi1pi + xi2pi) * cpi_aa + (xi1xb + xi2xb) * cxb_aa + (xi1q + xi2q) * cq_aa))
            .sqrt()
        * (t * m_a.powi(2) * (xi1x + xi2x) / 2.0).exp();
    let cu_aa = 5f64.sqrt()
        * (cpi_aa.powi(2)
            * ((bd + r3).powi(2) * (1.0 + r5 * cpi_a).powi(2) * cx_a.powi(2)
                + r2.powi(2) * (f2d * cxb_a + n.sigma).powi(2))
            + cx_aa.powi(2) * (bd + r3).powi(2) * cpi_a.powi(2)
            + cxb_aa.powi(2) * r2.powi(2) * f2d.powi(2) * cpi_a.powi(2)
            + bd.powi(2) * cq_aa.powi(2))
        .sqrt();

    for (k, v) in [
        ("M_T^A", m_a),
        ("M_T^{A,ref}", m_aa),
        ("C^Pi_A", cpi_a),
        ("C^Pi_{A,ref}", cpi_aa),
        ("C^Phi,xbar_A", phx_a),
        ("C^Phi,q_A", phq_a),
        ("C^Phi,c_A", phc_a),
        ("C^Psi,q_A", psq_a),
        ("C^Psi,xbar_A", psx_a),
        ("C^Psi,c_A", psc_a),
        ("C^xbar_A", cxb_a),
        ("C^q_A", cq_a),
        ("C^x_A", cx_a),
        ("C^Phi,xbar_{A,ref}", phx_aa),
        ("C^Phi,q_{A,ref}", phq_aa),
        ("C^Phi,Pi_{A,ref}", phpi_aa),
        ("C^Psi,xbar_{A,ref}", psx_aa),
        ("C^Psi,q_{A,ref}", psq_aa),
        ("C^Psi,Pi_{A,ref}", pspi_aa),
        ("C^xbar_{A,ref}", cxb_aa),
        ("C^q_{A,ref}", cq_aa),
        ("C^Xi1_ref", xi1d),
        ("C^Xi2_ref", xi2d),
        ("C^Xi1,x_{A,ref}", xi1x),
        ("C^Xi2,x_{A,ref}", xi2x),
        ("C^Xi1,Pi_{A,ref}", xi1pi),
        ("C^Xi2,Pi_{A,ref}", xi2pi),
        ("C^Xi1,xbar_{A,ref}", xi1xb),
        ("C^Xi2,xbar_{A,ref}", xi2xb),
        ("C^Xi1,q_{A,ref}", xi1q),
        ("C^Xi2,q_{A,ref}", xi2q),
        ("C^x_{A,ref}", cx_aa),
        ("C^u_{A,ref}", cu_aa),
    ] {
        put(out, k, v);
    }
    put(cond, "small_time_A_own", own_a);
    put(cond, "small_time_A_diff", small);
}

fn family_b(n: &Norms<f64>, rf: &Named, out: &mut Named, cond: &mut Named) {
    let t = n.horizon;
    let (r1, r2, r3, r5) = (rf["R1"], rf["R2"], rf["R3"], rf["R5"]);
    let m = n.m_t;
    let bd = n.b_ref;
    let bb = n.b;
    let f2d = n.f2_ref;
    let sg = n.sigma;
    let (cpid, cxbd, cqd, cxd) = (rf["C^Pi_ref"], rf["C^xbar_ref"], rf["C^q_ref"], rf["C^x_ref"]);
    let gf = n.g * n.f2_hat;
    let dbb = n.diff_b;

    let cpi_b = 2.0 * m.powi(2) * (8.0 * t * m.powi(2) * n.d.powi(2) * n.tr_q).exp() * (n.g + t * n.m);
    let k = 2f64.sqrt() * m * (8.0 * t * m.powi(2) * n.d.powi(2) * n.tr_q).exp();
    let cpi1 = t.sqrt()
        * (0.5 * m.powi(2) * (1.0 + n.d.powi(2)) * t).exp()
        * k
        * 2.0
        * (n.m * t + n.g)
        * ((bd + r3 + r5) * t * k).exp();
    let cpi2 = t.sqrt()
        * (0.5 * m.powi(2) * (1.0 + n.d.powi(2)) * t).exp()
        * k
        * ((bb + bd + 2.0 * r3) * t * (bd + r3) * cpid.powi(3) * dbb)
        * ((bd + r3 + r5) * t * k).exp();

    let phx_b = bb * (bb + r3 + r2 * f2d) * cpi_b + n.f1;
    let phq_b = bb.powi(2);
    let phc_b = r2 * bb * sg * cpid;
    let psq_b = cpi_b * (bb + r3) * bb;
    let psx_b = (r1 * cpi_b + cpi_b.powi(2) * (bb + r3) * r2) * f2d + cpi_b * n.f1 + n.m * n.f1_hat;
    let psc_b = r1 * cpi_b + cpi_b.powi(2) * (bb + r3) * r2;
    let own_b = m * (psx_b * t + gf);
    let cxb_b = 1.0 / (1.0 - own_b)
        * (m * (phc_b * t + n.xi_bar) * (m * phx_b * t).exp()
            + m * phq_b * t * (m * psc_b * t) * (m * (phx_b + psq_b) * t).exp());
    let cq_b = m * psc_b * t * (m * psq_b * t).exp() + m * (psx_b * t + gf) * (m * psq_b * t).exp() * cxb_b;
    let cx_b = (3.0 * m.powi(2) * n.xi_m2
        + 3.0 * t * m.powi(2) * ((bb.powi(2) + n.e.powi(2)) * (bb * cq_b + r2 * (f2d * cxb_b + sg) * cpid))
        + 3.0 * t * m.powi(2) * (n.f1.powi(2) + f2d.powi(2)) * cxb_b.powi(2)
        + 3.0 * t * m.powi(2) * sg.powi(2))
    .sqrt()
        * (m.powi(2) * ((bb.powi(2) + n.e.powi(2)) * ((bb + r3) * cpid).powi(2) + n.d.powi(2)) * 3.0 * t / 2.0).exp();

    let w = f2d * cxbd + sg;
    let phx_bb = bb * (bb + r3) * cpi_b + bb * r2 * f2d * cpid + n.f1;
    let phq_bb = bb.powi(2);
    let phpi_bb = bb * (r5 + bb + r3) * cxb_b + bb * r2 * (f2d * cxb_b + sg);
    let phc_bb = (bd + r3) * cpid * cxbd + bb * cpid * cxbd + (bb + bd) * cqd + r2 * (w * cpid);
    let psx_bb = r1 * f2d * cpid + (bb + r3) * r2 * f2d * cpid + (cpi_b * n.f1 + n.m * n.f1_hat);
    let psq_bb = (bb + r3) * cpi_b * bb;
    let pspi_bb = (bb + r3) * bd * cqd
        + (bb + r3) * cpi_b * r5 * bd * cqd
        + r1 * w
        + (bb + r3) * r2 * w
        + (bb + r3) * cpi_b * r5 * r2 * w * cpid
        + (bb + r3) * cpi_b * r2 * (f2d * cxb_b + sg)
        + n.f1 * cxbd;
    let psc_bb = cpid * bd * cqd + (bb + r3) * cpid * cqd + cpid * r2 * w * cpid;

    let small = (m * psx_bb * t + m * gf) * m * phq_bb * t * (m * (phx_bb + psq_bb) * t).exp();
    let lead = 1.0 / (1.0 - small);
    let cxb1 = lead
        * (m * (phpi_bb * cpi1 + phc_bb) * t * (m * phx_bb * t).exp()
            + m * phq_bb * t * m * (pspi_bb * cpi1 + psc_bb) * t * (m * (phx_bb + psq_bb) * t).exp());
    let cxb2 = lead
        * (m * (phpi_bb * cpi2) * t * (m * phx_bb * t).exp()
            + m * phq_bb * t * m * (pspi_bb * cpi2) * t * (m * (phx_bb + psq_bb) * t).exp());
    let cq1 = m * (pspi_bb * cpi1 + psc_bb) * t * (m * psq_bb * t).exp()
        + (m * psx_bb * t + m * gf) * (m * psq_bb * t).exp() * cxb1;
    let cq2 = m * (pspi_bb * cpi2) * t * (m * psq_bb * t).exp() + (m * psx_bb * t + m * gf) * (m * psq_bb * t).exp() * cxb2;

    let x1x = 5.0 * ((bb + r3) * cpid).powi(2);
    let x1pi = 5.0
        * (bb * r5 * (bd + r3) * cpid * cxd + bb * (bb + r3) * cxd + bb * r5 * bd * cqd + bb * r2 * (f2d * cxb_b + sg))
            .powi(2);
    let x1xb = 5.0 * (bb * r2 * f2d * cpid + n.f1).powi(2);
    let x1q = 5.0 * bb.powi(4);
    let x1c = 5.0
        * ((bd + r3) * cpid * cxd
            + bb * r5 * (bd + r3) * cpid * cxd
            + bb.powi(2) * cxd
            + bd * cqd
            + bb * r5 * bd * cqd
            + bb * cqd
            + r2 * w * cpid)
            .powi(2);
    let x2x = 5.0 * (n.d + n.e * (bd + r3)).powi(2);
    let x2pi = 5.0
        * (n.e * r5 * (bd + r3) * cpid * cxd
            + n.e * (bb + r3) * cxd
            + n.e * r5 * bd * cqd
            + n.e * r5 * r2 * w * cpid
            + n.e * r2 * w)
            .powi(2);
    let x2xb = 5.0 * (bb * r2 * f2d * cpid).powi(2);
    let x2q = 5.0 * (n.e * bb).powi(2);
    let x2c = 5.0 * (n.e * cpid * cxd + n.e * cqd).powi(2);
    let grow = (t * m.powi(2) * (x1x + x2x) / 2.0).exp();
    let cx1 = t.sqrt() * m * 3f64.sqrt() * ((x1xb + x2xb).sqrt() * cxb1 + (x1q + x2q).sqrt() * cq1 + (x1c + x2c).sqrt()) * grow;
    let cx2 = t.sqrt() * m * 3f64.sqrt() * ((x1xb + x2xb).sqrt() * cxb2 + (x1q + x2q).sqrt() * cq2) * grow;
    let cu1 = 6.0 * ((bd + r3) * (1.0 + r5 * cpi_b) * cxd + 6.0 * r2 * (f2d * cxb_b + sg)) * cpi1
        + 6.0 * (bd + r3) * cpi_b * cx1
        + 6.0 * r2 * f2d * cpid * cxb1
        + 6.0 * cqd
        + 6.0 * bb * cq1;
    let cu2 = 6.0 * ((bd + r3) * (1.0 + r5 * cpi_b) * cxd + r2 * (f2d * cxb_b + sg)) * cpi2
        + 6.0 * (bd + r3) * cpi_b * cx2
        + 6.0 * r2 * f2d * cpid * cxb2
        + 6.0 * bb * cq2;

    for (k, v) in [
        ("C^Pi_B", cpi_b),
        ("C^Pi,1_{B,ref}", cpi1),
        ("C^Pi,2_{B,ref}", cpi2),
        ("C^Phi,xbar_B", phx_b),
        ("C^Phi,q_B", phq_b),
        ("C^Phi,c_B", phc_b),
        ("C^Psi,q_B", psq_b),
        ("C^Psi,xbar_B", psx_b),
        ("C^Psi,c_B", psc_b),
        ("C^xbar_B", cxb_b),
        ("C^q_B", cq_b),
        ("C^x_B", cx_b),
        ("C^Phi,xbar_{B,ref}", phx_bb),
        ("C^Phi,q_{B,ref}", phq_bb),
        ("C^Phi,Pi_{B,ref}", phpi_bb),
        ("C^Phi,c_{B,ref}", phc_bb),
        ("C^Psi,xbar_{B,ref}", psx_bb),
        ("C^Psi,q_{B,ref}", psq_bb),
        ("C^Psi,Pi_{B,ref}", pspi_bb),
        ("C^Psi,c_{B,ref}", psc_bb),
        ("C^xbar,1_{B,ref}", cxb1),
        ("C^xbar,2_{B,ref}", cxb2),
        ("C^q,1_{B,ref}", cq1),
        ("C^q,2_{B,ref}", cq2),
        ("C^Xi1,x_{B,ref}", x1x),
        ("C^Xi1,Pi_{B,ref}", x1pi),
        ("C^Xi1,xbar_{B,ref}", x1xb),
        ("C^Xi1,q_{B,ref}", x1q),
        ("C^Xi1,c_{B,ref}", x1c),
        ("C^Xi2,x_{B,ref}", x2x),
        ("C^Xi2,Pi_{B,ref}", x2pi),
        ("C^Xi2,xbar_{B,ref}", x2xb),
        ("C^Xi2,q_{B,ref}", x2q),
        ("C^Xi2,c_{B,ref}", x2c),
        ("C^x,1_{B,ref}", cx1),
        ("C^x,2_{B,ref}", cx2),
        ("C^u,1_{B,ref}", cu1),
        ("C^u,2_{B,ref}", cu2),
    ] {
        put(out, k, v);
    }
    put(cond, "small_time_B_own", own_b);
    put(cond, "small_time_B_diff", small);
}

fn family_f2(n: &Norms<f64>, rf: &Named, out: &mut Named, cond: &mut Named) {
    let t = n.horizon;
    let (r1, r2, r3) = (rf["R1"], rf["R2"], rf["R3"]);
    let m = n.m_t;
    let bd = n.b_ref;
    let f2 = n.f2;
    let f2d = n.f2_ref;
    let sg = n.sigma;
    let (cpid, cxbd) = (rf["C^Pi_ref"], rf["C^xbar_ref"]);
    let gf = n.g * n.f2_hat;

    let phx_ff = bd * (bd + r3) * cpid + n.f1 + bd * r2 * f2 * cpid;
    let phq_ff = bd;
    let phc_ff = r2 * bd * cxbd;
    let psx_ff = r1 * f2 * cpid + (bd + r3) * cpid * r2 * f2 * cpid + (cpid * n.f1 + n.m * n.f1_hat);
    let psq_ff = (bd + r3) * cpid * bd;
    let psc_ff = (bd + r3) * cpid * r2 * cxbd * cpid;
    let small = (m * psx_ff * t + m * gf) * m * phq_ff * t * (m * (phx_ff + psq_ff) * t).exp();
    let cxb_ff = 1.0 / (1.0 - small)
        * ((m * phc_ff * t) * (m * psq_ff * t).exp()
            + m * phq_ff * t * (m * psc_ff * t) * (m * (phx_ff + psq_ff) * t).exp());
    let cq_ff = (m * psc_ff * t) * (m * (phx_ff + psq_ff) * t).exp()
        + (m * psx_ff * t + m * gf) * (m * psq_ff * t).exp() * cxb_ff;

    let phx_f = bd * (bd + r3 + r2 * f2) * cpid + n.f1;
    let phq_f = bd.powi(2);
    let phc_f = bd * r2 * sg * cpid;
    let psq_f = cpid * (bd + r3) * bd;
    let psx_f = (r1 * cpid + cpid.powi(2) * (bd + r3) * r2) * f2 + cpid * n.f1 + n.m * n.f1_hat;
    let psc_f = r1 * cpid + cpid.powi(2) * (bd + r3) * r2;
    let own_f = m * (psx_f * t + gf);
    let cxb_f = 1.0 / (1.0 - own_f)
        * (m * (phc_f * t + n.xi_bar) * (m * phx_f * t).exp()
            + m * phq_f * t * (m * psc_f * t) * (m * (phx_f + psq_f) * t).exp());
    let cq_f = m * psc_f * t * (m * psq_f * t).exp() + m * (psx_f * t + gf) * (m * psq_f * t).exp() * cxb_f;
    let cx_f = (3.0 * m.powi(2) * n.xi_m2
        + 3.0 * t * m.powi(2) * ((bd.powi(2) + n.e.powi(2)) * (bd * cq_f + r2 * (f2 * cxb_f + sg) * cpid))
        + 3.0 * t * m.powi(2) * (n.f1.powi(2) + f2.powi(2)) * cxb_f.powi(2)
        + 3.0 * t * m.powi(2) * sg.powi(2))
    .sqrt()
        * (m.powi(2) * ((bd.powi(2) + n.e.powi(2)) * ((bd + r3) * cpid).powi(2) + n.d.powi(2)) * 3.0 * t / 2.0).exp();

    let x1x = bd.powi(2) * (bd + r3).powi(2) * cpid.powi(2);
    let x1xb = bd.powi(2) * r2.powi(2) * f2.powi(2);
    let x1q = bd.powi(4);
    let x1c = bd.powi(2) * (r2 * cxbd * cpid).powi(2);
    let x2x = (n.d + n.e * (bd + r3) * cpid).powi(2);
    let x2xb = f2.powi(2) + (r2 * n.e * f2d * cpid).powi(2);
    let x2q = n.e.powi(2) * bd.powi(2);
    let x2c = n.e.powi(2) * (r2 * cxbd * cpid).powi(2);
    let cx_ff = t.sqrt()
        * m
        * ((x1q + x2q) * cq_ff + (x1xb + x2xb) * cxb_ff + x1c + x2c).sqrt()
        * (t * m.powi(2) * (x1x + x2x) / 2.0).exp();
    let cu_ff = 6f64.sqrt() * ((bd + r3) * cx_ff + r2 * cpid * (cxbd.powi(2) + f2.powi(2) * cxb_ff.powi(2)) + bd * cq_ff).sqrt();

    for (k, v) in [
        ("C^Phi,xbar_{F2,ref}", phx_ff),
        ("C^Phi,q_{F2,ref}", phq_ff),
        ("C^Phi,c_{F2,ref}", phc_ff),
        ("C^Psi,xbar_{F2,ref}", psx_ff),
        ("C^Psi,q_{F2,ref}", psq_ff),
        ("C^Psi,c_{F2,ref}", psc_ff),
        ("C^xbar_{F2,ref}", cxb_ff),
        ("C^q_{F2,ref}", cq_ff),
        ("C^Phi,xbar_F2", phx_f),
        ("C^Phi,q_F2", phq_f),
        ("C^Phi,c_F2", phc_f),
        ("C^Psi,q_F2", psq_f),
        ("C^Psi,xbar_F2", psx_f),
        ("C^Psi,c_F2", psc_f),
        ("C^xbar_F2", cxb_f),
        ("C^q_F2", cq_f),
        ("C^x_F2", cx_f),
        ("C^Xi1,x_{F2,ref}", x1x),
        ("C^Xi1,xbar_{F2,ref}", x1xb),
        ("C^Xi1,q_{F2,ref}", x1q),
        ("C^Xi1,c_{F2,ref}", x1c),
        ("C^Xi2,x_{F2,ref}", x2x),
        ("C^Xi2,xbar_{F2,ref}", x2xb),
        ("C^Xi2,q_{F2,ref}", x2q),
        ("C^Xi2,c_{F2,ref}", x2c),
        ("C^x_{F2,ref}", cx_ff),
        ("C^u_{F2,ref}", cu_ff),
    ] {
        put(out, k, v);
    }
    put(cond, "small_time_F2_own", own_f);
    put(cond, "small_time_F2_diff", small);
}

/// Coupled Gronwall bounds `(f, g, condition)` for the inequality system.
#[allow(clippy::too_many_arguments)]
pub fn fb_gronwall(af: f64, bf: f64, cf: f64, df: f64, ag: f64, bg: f64, cg: f64, dg: f64, dgf: f64, t: f64) -> (f64, f64, f64) {
    let cnd = (bg * t + dgf) * bf * t * ((af + ag) * t).exp();
    let core = (cf * t + df) * (af * t).exp() + bf * t * (cg * t + dg) * ((af + ag) * t).exp();
    let f = core / (1.0 - cnd);
    let g = (cg * t + dg) * (ag * t).exp() + (bg * t + dgf) * (ag * t).exp() * f;
    (f, g, cnd)
}

/// Largest relative disagreement between the library ledger and the oracle,
/// with the offending key; also fails on any key present in only one of them.
pub fn compare(lib: &mfglab::stability::ConstantLedger<f64>, ora: &OracleLedger) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let mut check = |k: &str, a: Option<f64>, b: Option<f64>| {
        let d = match (a, b) {
            (Some(a), Some(b)) if a.is_finite() && b.is_finite() => super::rel(a, b),
            (Some(a), Some(b)) if a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()) => 0.0,
            _ => f64::INFINITY,
        };
        if d > worst.0 || (d.is_infinite() && worst.0.is_finite()) {
            worst = (d, k.to_string());
        }
    };
    let keys = |a: &Named, b: &BTreeMap<String, f64>| {
        a.keys().chain(b.keys()).cloned().collect::<std::collections::BTreeSet<_>>()
    };
    for k in keys(&ora.reference, &lib.reference_bounds) {
        check(&k, lib.reference_bounds.get(&k).copied(), ora.reference.get(&k).copied());
    }
    for k in keys(&ora.constants, &lib.perturbation_constants) {
        check(&k, lib.perturbation_constants.get(&k).copied(), ora.constants.get(&k).copied());
    }
    let lib_cond: BTreeMap<String, f64> = lib.conditions.iter().map(|(k, (v, _))| (k.clone(), *v)).collect();
    for k in keys(&ora.conditions, &lib_cond) {
        check(&k, lib_cond.get(&k).copied(), ora.conditions.get(&k).copied());
    }
    worst
}

/// Minimal solution of the inequality system taken with equality, by Picard
/// iteration on a fine grid.
pub fn gronwall_majorant(p: &mfglab::stability::FbGronwallInputs<f64>) -> (f64, f64) {
    let n = 2000;
    let t = p.horizon;
    let h = t / n as f64;
    let mut f = vec![0.0; n + 1];
    let mut g = vec![0.0; n + 1];
    for _ in 0..500 {
        let mut nf = vec![p.d_f; n + 1];
        let mut ng = vec![p.d_gf * f[n] + p.d_g; n + 1];
        let (mut acc_f, mut acc_g) = (0.0, 0.0);
        for i in 1..=n {
            let fi = |j: usize| p.a_f * f[j] + p.b_f * g[n - j] + p.c_f;
            let gi = |j: usize| p.a_g * g[j] + p.b_g * f[n - j] + p.c_g;
            acc_f += 0.5 * h * (fi(i - 1) + fi(i));
            acc_g += 0.5 * h * (gi(i - 1) + gi(i));
            nf[i] = p.d_f + acc_f;
            ng[i] = p.d_gf * f[n] + p.d_g + acc_g;
        }
        let change = nf.iter().zip(&f).chain(ng.iter().zip(&g)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        f = nf;
        g = ng;
        if change < 1e-13 {
            break;
        }
    }
    (f.iter().copied().fold(0.0, f64::max), g.iter().copied().fold(0.0, f64::max))
}
