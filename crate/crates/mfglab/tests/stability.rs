//! Stability constants, Gronwall bounds and scalar genericity.

mod common;

use mfglab::mfg_solver::{solve_equilibrium, ConsistencyOptions};
use mfglab::model::{Family, MfgModel, RulePerturbation, ScalarExample};
use mfglab::riccati::{solve_riccati, TimeGrid};
use mfglab::stability::{
    fb_gronwall_bounds, perturbation_constants, perturbation_sweep, FbGronwallInputs, Norms, SweepOptions,
};
use mfglab::Error;
use rand::Rng;

#[test]
fn gronwall_bounds_dominate_the_extremal_solution() {
    let mut r = common::rng(21);
    let mut tested = 0;
    while tested < 60 {
        let mut s = || r.gen_range(0.0..1.2);
        let p = FbGronwallInputs {
            a_f: s(),
            b_f: s(),
            c_f: s(),
            d_f: s(),
            a_g: s(),
            b_g: s(),
            c_g: s(),
            d_g: s(),
            d_gf: s(),
            horizon: 0.1 + s(),
        };
        let Ok(b) = fb_gronwall_bounds(&p) else { continue };
        tested += 1;
        let (fm, gm) = common::oracle::gronwall_majorant(&p);
        assert!(fm <= b.f_bound + 1e-9 && gm <= b.g_bound + 1e-9, "{p:?}");
        let (fo, go, co) =
            common::oracle::fb_gronwall(p.a_f, p.b_f, p.c_f, p.d_f, p.a_g, p.b_g, p.c_g, p.d_g, p.d_gf, p.horizon);
        assert!(common::rel(fo, b.f_bound) < 1e-12 && common::rel(go, b.g_bound) < 1e-12);
        assert!(common::rel(co, b.condition) < 1e-12);
    }
}

#[test]
fn gronwall_rejects_a_violated_contraction() {
    let p = FbGronwallInputs {
        a_f: 1.0,
        b_f: 2.0,
        c_f: 0.0,
        d_f: 1.0,
        a_g: 1.0,
        b_g: 2.0,
        c_g: 0.0,
        d_g: 1.0,
        d_gf: 1.0,
        horizon: 1.0,
    };
    assert!(matches!(fb_gronwall_bounds(&p), Err(Error::ContractionViolated(_))));
    let neg = FbGronwallInputs { a_f: -1.0, ..p };
    assert!(matches!(fb_gronwall_bounds(&neg), Err(Error::Domain(_))));
}

#[test]
fn constants_agree_with_the_oracle_in_three_dimensions() {
    for k in 0..6u64 {
        let mut reference = common::random_model(800 + k, 3, 2, 2);
        reference.horizon = 0.05;
        for fam in [Family::A, Family::B, Family::F2] {
            let dir = common::random_direction(900 + k, 3, 2, 2, fam);
            let pert = reference.with_perturbation(&dir.scale(0.02)).unwrap();
            let lib = perturbation_constants(&reference, &pert, fam).unwrap();
            assert!(lib.all_conditions_pass(), "model {k} {fam}");
            let ora = common::oracle::family(&Norms::of_pair(&reference, &pert).unwrap(), fam);
            let (d, key) = common::oracle::compare(&lib, &ora);
            assert!(d <= 1e-12, "model {k} {fam} {key}: {d:e}");
        }
    }
}

#[test]
fn identical_models_have_zero_differences() {
    let m = common::random_model(3, 2, 2, 1);
    let n = Norms::of_pair(&m, &m).unwrap();
    assert_eq!((n.diff_a, n.diff_b, n.diff_f2), (0.0, 0.0, 0.0));
}

#[test]
fn family_mismatch_is_rejected() {
    let m = common::desk_model();
    let dir = common::random_direction(1, 2, 1, 1, Family::B);
    let pert = m.with_perturbation(&dir.scale(0.1)).unwrap();
    assert!(perturbation_constants(&m, &pert, Family::A).is_err());
}

#[test]
fn sweep_directions_must_name_one_family() {
    let m = common::desk_model();
    let opts = SweepOptions { steps: 50, n_paths: 100, seed: 1, consistency: ConsistencyOptions::default() };
    let zero = RulePerturbation::zeros(2, 1, 1);
    assert!(matches!(perturbation_sweep(&m, &zero, &[0.0, 0.5], &opts), Err(Error::Invalid(_))));
    let mut mixed = common::random_direction(2, 2, 1, 1, Family::A);
    mixed.delta_b = common::random_direction(3, 2, 1, 1, Family::B).delta_b;
    assert!(matches!(perturbation_sweep(&m, &mixed, &[0.0, 0.5], &opts), Err(Error::Invalid(_))));
}

#[test]
fn zero_scale_rows_are_exactly_flat() {
    let mut m = common::desk_model();
    m.horizon = 0.2;
    let dir = common::random_direction(4, 2, 1, 1, Family::F2);
    let opts = SweepOptions { steps: 50, n_paths: 100, seed: 1, consistency: ConsistencyOptions::default() };
    let res = perturbation_sweep(&m, &dir, &[0.0, 0.5], &opts).unwrap();
    assert!(res.rows[0].deltas.values().all(|v| *v == 0.0));
    assert!(res.rows[1].deltas["dxbar"] > 0.0);
}

#[test]
fn single_precision_tracks_double_precision() {
    let p64 = ScalarExample::<f64>::default();
    let p32 = ScalarExample::<f32> {
        a: p64.a as f32,
        m: p64.m as f32,
        g: p64.g as f32,
        b: p64.b as f32,
        s: p64.s as f32,
        xi_mean: p64.xi_mean as f32,
        xi_var: p64.xi_var as f32,
        horizon: p64.horizon as f32,
        q: p64.q as f32,
    };
    let m64 = MfgModel::scalar_example(&p64);
    let m32 = MfgModel::scalar_example(&p32);
    let r64 = solve_riccati(&m64, &TimeGrid::new(1.0, 200).unwrap()).unwrap();
    let r32 = solve_riccati(&m32, &TimeGrid::new(1.0f32, 200).unwrap()).unwrap();
    for (a, b) in r64.pi.iter().zip(&r32.pi) {
        assert!((a.get(0, 0) - b.get(0, 0) as f64).abs() < 1e-5);
    }
    let opts = ConsistencyOptions { tol: 1e-5, ..ConsistencyOptions::default() };
    let e32 = solve_equilibrium(&m32, 200, &opts).unwrap();
    assert!(e32.xbar.iter().all(|x| (x[0] - 1.0).abs() < 1e-4));
}
