mod common;

use common::*;
use proptest::prelude::*;
use qswna::dispersion::critical_dprime;
use qswna::series::*;
use qswna::{ModelParams, SteadyState};

fn default_ctx() -> (ModelParams, SteadyState, SeriesContext) {
    let p = ModelParams::default();
    let s = p.steady().unwrap();
    let d0 = critical_dprime(&p, &s, p.k1()).unwrap();
    let c = SeriesContext::new(&p, &s, p.k1(), d0, 64);
    (p, s, c)
}

#[test]
fn recursions_match_oracle_on_random_draws() {
    let worst = series_oracle_mismatch(20, 5);
    assert!(worst < 1e-10, "worst mismatch {worst:e}");
}

#[test]
fn leading_q_entries() {
    let (_, _, c) = default_ctx();
    let q = q_table(&c, 4, 12).unwrap();
    assert_eq!(q.get(0, 0).unwrap(), 0.0);
    let lam = c.lambda;
    let want = (lam.powi(3) / (2.0 * std::f64::consts::PI)).sqrt() * c.rho * c.g1 / (c.d0() * c.k * c.k + lam);
    assert!(rel(q.get(0, 1).unwrap(), want) < 1e-15);
    // q^(1)_0 = 2 q^(0)_2 / (D0 k^2)
    assert!(rel(q.get(1, 0).unwrap(), 2.0 * q.get(0, 2).unwrap() / (c.d0() * c.k * c.k)) < 1e-14);
}

#[test]
fn leading_w_and_s_entries() {
    let (_, _, c) = default_ctx();
    let kk = c.d0() * c.k * c.k;
    let w = w_table(&c, 2, 8, 1).unwrap();
    let w00 = c.alpha0 * c.u_star / kk;
    assert!(rel(w.get(0, 0).unwrap(), w00) < 1e-15);
    assert!(rel(w.get(0, 1).unwrap(), (c.alpha0 - w00 * c.d[1] * c.k * c.k) / (kk + c.lambda)) < 1e-14);
    let q = q_table(&c, 2, 8).unwrap();
    let s = s_table(&c, &q, 0.3, 2, 8).unwrap();
    assert_eq!(s.get(0, 0).unwrap(), 0.0);
    assert_eq!(s.get(0, 1).unwrap(), 0.0);
}

#[test]
fn no_production_slope_no_q() {
    let mut p = ModelParams::default();
    p.production.v = 0.0;
    let s = p.steady().unwrap();
    let c = SeriesContext::new(&p, &s, p.k1(), -1.5, 40);
    let q = q_table(&c, 4, 16).unwrap();
    assert!(q.coeffs.iter().flatten().all(|&x| x == 0.0));
}

#[test]
fn source_only_at_first_power() {
    // with D constant, row 0 of q is zero except at l = 1
    let (p, s, _) = default_ctx();
    let c = SeriesContext::new(&p, &s, p.k1(), 0.0, 40);
    let q = q_table(&c, 0, 12).unwrap();
    for (l, &v) in q.coeffs[0].iter().enumerate() {
        assert_eq!(v != 0.0, l == 1, "l = {l}");
    }
}

#[test]
fn doubled_multiplier_is_doubled_wavenumber() {
    let (p, s, c) = default_ctx();
    let c2 = SeriesContext::new(&p, &s, 2.0 * p.k1(), c.d[1], 64);
    let a = w_table(&c, 4, 16, 2).unwrap();
    let b = w_table(&c2, 4, 16, 1).unwrap();
    assert_eq!(a.coeffs, b.coeffs);
    assert!(w_table(&c, 4, 16, 3).is_err());
}

#[test]
fn deep_tables_stay_finite() {
    let (_, _, c) = default_ctx();
    let q = q_table(&c, 8, 64).unwrap();
    let w = w_table(&c, 8, 64, 1).unwrap();
    let wt = w_table(&c, 8, 64, 2).unwrap();
    let s = s_table(&c, &q, 0.2, 8, 64).unwrap();
    for t in [&q, &w, &wt, &s] {
        assert!(t.coeffs.iter().flatten().all(|x| x.is_finite()), "{:?}", t.kind);
    }
}

#[test]
fn depth_is_checked() {
    let (_, _, c) = default_ctx();
    assert!(q_table(&c, 4, 6).is_err());
    let q = q_table(&c, 2, 8).unwrap();
    assert!(q.get(3, 0).is_err());
    assert!(q.get(2, 5).is_err());
    assert_eq!(default_l_max(4), 16);
}

#[test]
fn oracle_is_linear_in_the_source() {
    let (_, _, c) = default_ctx();
    for kind in [SeriesKind::Q, SeriesKind::W, SeriesKind::Wtilde, SeriesKind::S] {
        let mut spec = AmplitudeOdeSpec::for_kind(kind, 0.4);
        let one = oracle_series(&spec, &c, 3, 10).unwrap();
        spec.source_scale = 0.0;
        let zero = oracle_series(&spec, &c, 3, 10).unwrap();
        assert!(zero.coeffs.iter().flatten().all(|&x| x == 0.0), "{kind:?}");
        spec.source_scale = 2.0;
        spec.c22 = 0.4;
        let two = oracle_series(&spec, &c, 3, 10).unwrap();
        for (a, b) in one.coeffs.iter().flatten().zip(two.coeffs.iter().flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-13 * b.abs().max(1e-300), "{kind:?}: {a} {b}");
        }
    }
}

#[test]
fn evaluation_at_the_peak_keeps_only_constant_terms() {
    let (_, s, c) = default_ctx();
    let q = q_table(&c, 3, 12).unwrap();
    let eps: f64 = 0.01;
    let want: f64 = (0..=3).map(|j| eps.powi(j) * q.coeffs[j as usize][0]).sum();
    let v = eval_series(&q, s.u_star, c.lambda, s.u_star, 3, 12, eps, false);
    assert!((v.value - want).abs() < 1e-15 * want.abs().max(1e-300));
}

#[test]
fn envelope_is_gaussian() {
    // compare against the bare series at the same point
    let (_, s, c) = default_ctx();
    let q = q_table(&c, 2, 12).unwrap();
    let eps = 1e-3;
    let du = 3.0 * (eps / c.lambda).sqrt();
    for u in [s.u_star - du, s.u_star + du] {
        let bare = eval_series(&q, s.u_star, c.lambda, u, 2, 12, eps, false).value;
        let full = eval_series(&q, s.u_star, c.lambda, u, 2, 12, eps, true).value;
        assert!(rel(full / bare, eps.powf(-1.5) * (-4.5f64).exp()) < 1e-12);
    }
}

#[test]
fn series_derivative_matches_differences() {
    let (_, s, c) = default_ctx();
    let w = w_table(&c, 2, 12, 1).unwrap();
    let (u, h, eps) = (s.u_star + 0.05, 1e-5, 1e-3);
    let f = |u: f64| eval_series(&w, s.u_star, c.lambda, u, 2, 12, eps, false).value;
    let fd = (f(u + h) - f(u - h)) / (2.0 * h);
    assert!(rel(eval_series_deriv(&w, s.u_star, u, 2, 12, eps), fd) < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn recursions_match_oracle_anywhere(seed in 0u64..100_000) {
        prop_assert!(series_oracle_mismatch(1, seed) < 1e-10);
    }
}
