use proptest::prelude::*;
use qswna::error::Error;
use qswna::series::{q_table, SeriesContext};
use qswna::stokes::*;
use qswna::wna::analyse;
use qswna::ModelParams;

fn full_ctx() -> StokesContext {
    let p = ModelParams::default();
    let st = p.steady().unwrap();
    let rep = analyse(&p).unwrap();
    StokesContext::from_params(&p, &st, p.k1(), rep.d_prime_critical, HModel::Full)
}

fn ext(j_max: usize) -> LateTermOptions {
    LateTermOptions { j_max, window: 40, precision: Precision::Extended { bits: 256 } }
}

fn real_part(t: &TermValue) -> f64 {
    t.log_abs.exp() * t.arg.cos()
}

fn check_smooth_against_table(d_prime: f64) {
    let p = ModelParams::default();
    let st = p.steady().unwrap();
    let k = p.k1();
    let ctx = StokesContext::from_params(&p, &st, k, d_prime, HModel::Full);
    let sc = SeriesContext::new(&p, &st, k, d_prime, 400);
    let table = q_table(&sc, 10, 300).unwrap();
    let s = 0.2;
    let study = generate_late_terms(&ctx, Offset::real(s), Seed::Smooth, &LateTermOptions { j_max: 10, window: 120, precision: Precision::Double }).unwrap();
    for j in 0..=10 {
        let poly: f64 = table.coeffs[j].iter().rev().fold(0.0, |acc, c| acc * s + c);
        let got = real_part(&study.terms[j]);
        let scale = poly.abs().max(1e-300);
        assert!(((got - poly) / scale).abs() < 1e-9 || (got - poly).abs() < 1e-12, "D'={d_prime} j={j}: {got} vs {poly}");
    }
}

#[test]
fn smooth_seed_with_constant_motility_matches_series_table() {
    check_smooth_against_table(0.0);
}

#[test]
fn smooth_seed_with_tanh_motility_matches_series_table() {
    check_smooth_against_table(-1.5);
}

#[test]
fn singular_seed_ratio_grows_linearly() {
    let st = generate_late_terms(&full_ctx(), Offset::real(0.5), Seed::singular(), &ext(40)).unwrap();
    let r20 = st.ratio(20).norm();
    let r39 = st.ratio(39).norm();
    // (j + gamma + 1) scaling
    let g1 = st.h0 - 0.5;
    let expect = (39.0 + g1) / (20.0 + g1);
    assert!((r39 / r20 / expect - 1.0).abs() < 0.01, "{r20} {r39}");
}

#[test]
fn normalized_ratio_within_two_percent_by_forty() {
    let ctx = full_ctx();
    for off in [Offset::real(0.5), Offset::real(-0.3), Offset { r: 0.4, theta: 1.1 }] {
        let st = generate_late_terms(&ctx, off, Seed::singular(), &ext(41)).unwrap();
        let r = st.normalized_ratio(40);
        assert!((r - 1.0).abs() < 0.02, "{off:?}: {r}");
    }
}

#[test]
fn singulant_and_gamma_estimates() {
    let ctx = full_ctx();
    let st = generate_late_terms(&ctx, Offset::real(0.5), Seed::singular(), &ext(60)).unwrap();
    let f40 = estimate_singulant(&st, 40, 10).unwrap();
    assert!(f40.v_rel_error < 0.02, "{f40:?}");
    let f60 = estimate_singulant(&st, 60, 10).unwrap();
    assert!(f60.gamma_rel_error < 0.05, "{f60:?}");
    assert!((f60.gamma_exact - (ctx.h0() - 1.5)).abs() < 1e-15);
}

#[test]
fn doubling_offset_quadruples_singulant() {
    let ctx = full_ctx();
    let s = generate_late_terms_multi(&ctx, &[Offset::real(0.2), Offset::real(0.4)], Seed::singular(), &ext(40)).unwrap();
    let a = estimate_singulant(&s[0], 40, 10).unwrap().v_hat.norm();
    let b = estimate_singulant(&s[1], 40, 10).unwrap().v_hat.norm();
    assert!((b / a - 4.0).abs() < 0.04, "{a} {b}");
}

#[test]
fn singulant_independent_of_pole_strength() {
    let ctx = full_ctx();
    let off = Offset::real(0.45);
    let a = generate_late_terms(&ctx, off, Seed::SingularPole { strength: 1.0, onset: 0 }, &ext(40)).unwrap();
    let b = generate_late_terms(&ctx, off, Seed::SingularPole { strength: -7.5, onset: 0 }, &ext(40)).unwrap();
    let va = estimate_singulant(&a, 40, 10).unwrap().v_hat;
    let vb = estimate_singulant(&b, 40, 10).unwrap().v_hat;
    assert!((va - vb).norm() / va.norm() < 0.02);
}

#[test]
fn late_onset_shifts_gamma_by_the_onset() {
    let ctx = full_ctx();
    let onset = 3;
    let st = generate_late_terms(&ctx, Offset::real(0.5), Seed::SingularPole { strength: 1.0, onset }, &ext(60)).unwrap();
    let f = estimate_singulant(&st, 60, 10).unwrap();
    let expect = ctx.h0() - 1.5 - onset as f64;
    assert!(f.v_rel_error < 0.02);
    assert!(((f.gamma_hat - expect) / expect).abs() < 0.10, "{} vs {expect}", f.gamma_hat);
}

#[test]
fn frozen_smooth_sequence_terminates() {
    let ctx = StokesContext::frozen(0.274, 1.0);
    let st = generate_late_terms(&ctx, Offset::real(0.5), Seed::Smooth, &ext(20)).unwrap();
    assert!(st.terms[0].log_abs.is_finite());
    assert!(st.terms[1..].iter().all(|t| t.log_abs == f64::NEG_INFINITY));
    assert!(matches!(estimate_singulant(&st, 20, 10), Err(Error::NotDivergent)));
}

#[test]
fn smooth_ratio_stays_below_singular_ratio() {
    let ctx = full_ctx();
    let off = Offset::real(0.5);
    let sm = generate_late_terms(&ctx, off, Seed::Smooth, &ext(40)).unwrap();
    let sg = generate_late_terms(&ctx, off, Seed::Homogeneous, &ext(40)).unwrap();
    for j in 10..40 {
        assert!(sm.ratio(j).norm() * 2.0 < sg.ratio(j).norm(), "j={j}");
    }
}

#[test]
fn double_precision_refuses_deep_sequences_and_overflow() {
    let ctx = StokesContext::frozen(0.5, 1.0);
    let o = LateTermOptions { j_max: 40, window: 10, precision: Precision::Double };
    assert!(matches!(generate_late_terms(&ctx, Offset::real(0.5), Seed::singular(), &o), Err(Error::NeedsExtendedPrecision)));
    let o = LateTermOptions { j_max: 30, window: 10, precision: Precision::Double };
    assert!(matches!(generate_late_terms(&ctx, Offset::real(1e-6), Seed::singular(), &o), Err(Error::NeedsExtendedPrecision)));
    let o = LateTermOptions { j_max: 30, window: 10, precision: Precision::Extended { bits: 128 } };
    assert!(generate_late_terms(&ctx, Offset::real(1e-6), Seed::singular(), &o).is_ok());
}

#[test]
fn rejects_evaluation_at_the_singular_point() {
    let ctx = StokesContext::frozen(0.5, 1.0);
    assert!(generate_late_terms(&ctx, Offset::real(0.0), Seed::singular(), &ext(5)).is_err());
}

#[test]
fn optimal_index_doubles_when_epsilon_halves() {
    for eps in [1e-2, 3e-3, 1e-3] {
        let a = optimal_index(1.0, 0.5, eps, 0);
        let b = optimal_index(1.0, 0.5, eps / 2.0, 0);
        assert!((b - 2 * a).abs() <= 1, "{a} {b}");
    }
}

#[test]
fn optimal_truncation_sits_at_least_term() {
    let ctx = full_ctx();
    for eps in [8e-3, 4e-3, 2e-3] {
        let tp = optimal_truncation(&ctx, Offset::real(0.5), eps, 0, Precision::Extended { bits: 256 }).unwrap();
        assert!(tp.near_minimal, "{eps}");
        assert!((tp.n_min as i64 - tp.n_opt as i64).abs() <= 2, "{eps}: {} vs {}", tp.n_min, tp.n_opt);
    }
    let frozen = StokesContext::frozen(0.8, 1.5);
    let tp = optimal_truncation(&frozen, Offset { r: 0.4, theta: 0.3 }, 3e-3, 0, Precision::Extended { bits: 256 }).unwrap();
    assert!((tp.n_min as i64 - tp.n_opt as i64).abs() <= 2);
}

#[test]
fn optimal_truncation_requires_three_terms() {
    let ctx = StokesContext::frozen(0.5, 1.0);
    assert!(optimal_truncation(&ctx, Offset::real(0.1), 0.01, 0, Precision::Double).is_err());
}

#[test]
fn remainder_decays_like_exp_of_singulant() {
    let rs = remainder_scaling(0.274, 1.0, 0.5, &[1e-2, 5e-3, 2.5e-3, 1.25e-3], 0, 256).unwrap();
    assert!(rs.slope_rel_error < 0.1, "{}", rs.slope);
    let rs = remainder_scaling(1.3, 2.0, 0.3, &[1e-2, 5e-3, 2.5e-3], 0, 256).unwrap();
    assert!(rs.slope_rel_error < 0.1, "{}", rs.slope);
}

#[test]
fn smoothing_profile_follows_error_function() {
    let sp = stokes_smoothing_profile(0.274, 1.0, 0.5, 1e-3, &theta_grid(0.25, 41), 0, 256).unwrap();
    assert!(sp.correlation > 0.95, "{}", sp.correlation);
    // S - erf(sqrt(lambda/eps) r (pi/2 - theta)): S - 1 below the Stokes line, S + 1 above
    let pred = sp.predicted();
    assert!((pred[0] - (sp.stokes_constant - 1.0)).norm() < 1e-6);
    assert!((pred[40] - (sp.stokes_constant + 1.0)).norm() < 1e-6);
    let lo = sp.measured[0] / sp.prefactor;
    let hi = sp.measured[40] / sp.prefactor;
    assert!(((hi - lo) - 2.0).norm() < 0.05, "jump {}", hi - lo);
}

#[test]
fn smoothing_width_scales_like_sqrt_eps_over_r() {
    let grid = |w: f64| theta_grid(w, 31);
    let a = stokes_smoothing_profile(0.5, 1.0, 0.5, 2e-3, &grid(0.35), 0, 256).unwrap();
    let b = stokes_smoothing_profile(0.5, 1.0, 0.5, 5e-4, &grid(0.175), 0, 256).unwrap();
    let c = stokes_smoothing_profile(0.5, 1.0, 0.25, 5e-4, &grid(0.35), 0, 256).unwrap();
    assert!((b.scale_fitted / a.scale_fitted - 2.0).abs() < 0.1, "{} {}", a.scale_fitted, b.scale_fitted);
    assert!((b.scale_fitted / c.scale_fitted - 2.0).abs() < 0.1, "{} {}", c.scale_fitted, b.scale_fitted);
}

#[test]
fn smoothing_grid_must_straddle_stokes_line() {
    let th: Vec<f64> = (0..5).map(|i| 0.5 + 0.1 * i as f64).collect();
    assert!(stokes_smoothing_profile(0.5, 1.0, 0.5, 1e-3, &th, 0, 256).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn frozen_ratio_law(h0 in 0.1f64..2.0, lambda in 0.5f64..2.0, r in 0.2f64..1.0, theta in -1.2f64..1.2) {
        let ctx = StokesContext::frozen(h0, lambda);
        let off = Offset { r, theta };
        let st = generate_late_terms(&ctx, off, Seed::Homogeneous, &LateTermOptions { j_max: 41, window: 2, precision: Precision::Extended { bits: 128 } }).unwrap();
        prop_assert!((st.normalized_ratio(40) - 1.0).abs() < 0.02);
        let f = estimate_singulant(&st, 40, 10).unwrap();
        prop_assert!(f.v_rel_error < 0.02);
    }
}
