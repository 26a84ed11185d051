mod common;

use common::*;
use qswna::error::Error;
use qswna::quad::integrate;
use qswna::wna::*;
use qswna::wna_oracle::{epsilon_trend, quadrature_values};
use qswna::ModelParams;

fn report() -> WnaReport {
    analyse(&ModelParams::default()).unwrap()
}

#[test]
fn default_report_values() {
    let r = report();
    assert!((r.d_prime_critical - -1.5391).abs() < 1e-4);
    assert!((r.mu - 0.396).abs() < 1e-3, "{}", r.mu);
    assert!((r.b - 2.683).abs() < 1e-3, "{}", r.b);
    assert_eq!(r.criticality, Criticality::Supercritical);
    assert!(r.i0 > 0.0);
    assert!(r.i2 < 0.0);
    assert!(r.b > 0.0);
}

#[test]
fn integrals_track_quadrature_with_first_order_error() {
    let rows = epsilon_trend(&ModelParams::default(), 1e-3, 5e-4).unwrap();
    assert_eq!(rows.len(), 8);
    for row in rows {
        assert!((1.5..=2.5).contains(&row.ratio), "{}: ratio {} ({:e} -> {:e})", row.name, row.ratio, row.err_large, row.err_small);
        assert!(row.err_small < 0.05 * row.leading.abs().max(1e-3), "{}", row.name);
    }
}

#[test]
fn signal_and_adjoint_integrals_agree() {
    let p = ModelParams::default();
    let s = p.steady().unwrap();
    let k = p.k1();
    let mut gaps = Vec::new();
    for eps in [1e-3, 5e-4] {
        let (_, v) = quadrature_values(&p, &s, k, eps, 3).unwrap();
        gaps.push((v.signal_integral - v.adjoint_integral).abs() / v.signal_integral.abs());
        // the signal integral closes the c equation at the threshold
        let target = p.d_c * k * k + p.beta;
        assert!(rel(v.signal_integral, target) < 20.0 * eps, "{} vs {target}", v.signal_integral);
    }
    assert!(gaps[1] < 1e-2);
    assert!(gaps[1] <= gaps[0] * 0.75 || gaps[1] < 1e-8, "{gaps:?}");
}

#[test]
fn second_order_solvability_is_trivial() {
    // both projections of the O(delta^2) forcing vanish by orthogonality of cos(kx) and cos(2kx)
    let p = ModelParams::default();
    let (l, k) = (p.l, p.k1());
    let on_one = integrate(|x| (k * x).cos().powi(2) - 0.5 * (1.0 + (2.0 * k * x).cos()), 0.0, l, 1e-13, 0.0);
    let with_mode = integrate(|x| (k * x).cos() * (k * x).cos().powi(2), 0.0, l, 1e-13, 0.0);
    let against_2k = integrate(|x| (k * x).cos() * (2.0 * k * x).cos(), 0.0, l, 1e-13, 0.0);
    for v in [on_one, with_mode, against_2k] {
        assert!(v.abs() < 1e-10, "{v}");
    }
}

#[test]
fn mu_formula_vanishes_without_curvature_terms() {
    let i = Integrals { i0: 1.0, i1_per_dprime: 2.0, i2: 0.0, i3: 0.0, i4: 0.0, i5: 0.0 };
    assert_eq!(compute_mu(0.7, 0.0, 0.0, 0.3, 0.2, &i), 0.0);
    let r = report();
    let i = Integrals { i0: r.i0, i1_per_dprime: r.i1_per_dprime, i2: r.i2, i3: r.i3, i4: r.i4, i5: r.i5 };
    assert_eq!(compute_mu(r.g1, r.g2, r.g3, r.c20, r.c22, &i), r.mu);
    assert_eq!(criticality(-1.0), Criticality::Subcritical);
    assert_eq!(criticality(0.0), Criticality::Degenerate);
}

#[test]
fn amplitude_equation_signs() {
    let r = report();
    let d0 = r.d_prime_critical;
    assert_eq!(r.amplitude_ode(d0).0, 0.0);
    for dd in [-0.1, -1e-3, 1e-3, 0.1] {
        let (s1, c) = r.amplitude_ode(d0 + dd);
        assert!(s1 * dd < 0.0);
        assert!((c - -r.mu / (r.i0 + 1.0)).abs() < 1e-15);
        if s1 / -c > 0.0 {
            let a = (s1 / -c).sqrt();
            for a in [a, -a] {
                assert!((s1 * a + c * a.powi(3)).abs() < 1e-14 * s1.abs() * a.abs());
            }
        }
    }
}

#[test]
fn branch_prediction_properties() {
    let r = report();
    let d0 = r.d_prime_critical;
    assert_eq!(r.branch_prediction(d0).unwrap().amplitude, 0.0);
    assert!(matches!(r.branch_prediction(d0 + 0.01), Err(Error::NoLocalBranch)));
    let a1 = r.branch_prediction(d0 - 0.01).unwrap();
    let a2 = r.branch_prediction(d0 - 0.04).unwrap();
    assert!(rel(a2.amplitude.powi(2), 4.0 * a1.amplitude.powi(2)) < 1e-13);
    assert_eq!(a1.valid_side, -1.0);
    // delta rho = |rho(L) - rho(0)|
    let dr = (a1.rho(r.k.recip() * std::f64::consts::PI, 1.0) - a1.rho(0.0, 1.0)).abs();
    assert!(rel(dr, a1.delta_rho()) < 1e-14);
    for dd in [1e-4, 1e-2, 0.1] {
        let bp = r.branch_prediction(d0 - dd).unwrap();
        let dd = d0 - (d0 - dd);
        assert!(rel(r.coefficient_b().unwrap() * dd.sqrt() * r.rho_star, bp.delta_rho()) < 1e-14);
        // fixed point of the rho amplitude equation is the predicted amplitude
        let (rr, cc) = r.rho_amplitude_ode(d0 - dd);
        assert!(rel((-rr / cc).sqrt(), bp.amplitude) < 1e-12, "{} {}", (-rr / cc).sqrt(), bp.amplitude);
    }
}

#[test]
fn degenerate_mu_refuses_predictions() {
    let mut r = report();
    r.mu = 0.0;
    r.b = f64::NAN;
    assert!(matches!(r.branch_prediction(r.d_prime_critical - 0.1), Err(Error::Degenerate(_))));
    assert!(r.coefficient_b().is_err());
}

#[test]
fn mu_changes_sign_once_along_rho() {
    let p = ModelParams::default();
    let grid: Vec<f64> = (0..=36).map(|i| 0.2 + 0.025 * i as f64).collect();
    let x = mu_crossings(&p, &grid);
    assert_eq!(x.len(), 1, "{x:?}");
    assert!((x[0] - 0.35019).abs() < 1e-4, "{}", x[0]);
    assert_eq!(analyse(&p.with_rho(0.3)).unwrap().criticality, Criticality::Subcritical);
    assert_eq!(analyse(&p.with_rho(0.4)).unwrap().criticality, Criticality::Supercritical);
}

#[test]
fn report_holds_on_random_draws() {
    let mut r = rng(31);
    for _ in 0..30 {
        let p = random_params(&mut r);
        let rep = analyse(&p).unwrap();
        assert!(rep.i0 > 0.0);
        assert!(rep.i2 < 0.0);
        assert_eq!(rep.criticality, criticality(rep.mu));
        assert!(rep.b > 0.0);
        assert!(rep.linear_rate_per_dprime < 0.0);
    }
}
