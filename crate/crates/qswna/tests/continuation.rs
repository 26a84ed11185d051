use qswna::continuation::*;
use qswna::pde::{newton_steady, Field, GridSpec, Problem, SolverOptions};
use qswna::series::{eval_series, q_table, SeriesContext};
use qswna::wna::analyse;
use qswna::{Error, ModelParams};

fn small() -> GridSpec {
    GridSpec { nx: 16, nu: 80, ..GridSpec::default() }
}

struct Setup {
    pr: Problem,
    uni: Field,
    det: Detection,
    d0: f64,
    b: f64,
}

fn setup(p: &ModelParams) -> Setup {
    let rep = analyse(p).unwrap();
    let d0 = rep.d_prime_critical;
    let pr = Problem::new(p, &small()).unwrap();
    let uni = pr.uniform_state().unwrap();
    let det = detect_bifurcation(&pr, &uni, (1.3 * d0, 0.7 * d0), 12).unwrap();
    Setup { pr, uni, det, d0, b: rep.b }
}

fn point_at(d: f64, y: f64) -> BranchPoint {
    BranchPoint { d_prime_star: d, delta_rho: y, amplitude: 0.5 * y, stable: None, s: 0.0, residual: 0.0, field: None }
}

#[test]
fn fit_b_recovers_synthetic_root_law() {
    let (d_hat, rho, b, b3) = (-1.5, 0.65, 2.683, 0.7);
    let pts: Vec<BranchPoint> = window_offsets(d_hat, 1e-4, 1e-2, 10)
        .into_iter()
        .map(|off| point_at(d_hat - off, rho * (b * off.sqrt() + b3 * off.powf(1.5))))
        .collect();
    let fit = fit_b(&pts, d_hat, rho, f64::INFINITY).unwrap();
    assert!((fit.b_hat - b).abs() < 1e-10, "{}", fit.b_hat);
    assert!((fit.b3 - b3).abs() < 1e-6, "{}", fit.b3);
    assert!(fit.fit_residual < 1e-12);
    assert_eq!(fit.n_points, 10);
    let narrow = fit_b(&pts, d_hat, rho, 1.5e-3);
    assert!(matches!(narrow, Err(Error::Fit(_))));
}

#[test]
fn exponent_and_leading_fits_on_exact_data() {
    let pts: Vec<(f64, f64)> = (1..8).map(|k| 1e-4 * 2f64.powi(k)).map(|d| (d, 3.0 * d.sqrt())).collect();
    let (slope, pre) = fit_exponent(&pts).unwrap();
    assert!((slope - 0.5).abs() < 1e-12 && (pre - 3.0).abs() < 1e-10);
    assert!((fit_b_leading(&pts).unwrap() - 3.0).abs() < 1e-12);
    assert!(fit_exponent(&pts[..2]).is_err());
    assert!(fit_b_leading(&[]).is_err());
}

#[test]
fn window_offsets_are_log_spaced() {
    let w = window_offsets(-2.0, 1e-4, 1e-2, 5);
    assert_eq!(w.len(), 5);
    assert!((w[0] - 2e-4).abs() < 1e-15 && (w[4] - 2e-2).abs() < 1e-14);
    for k in 1..5 {
        assert!((w[k] / w[k - 1] - 10f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn detection_lands_near_the_leading_order_threshold() {
    let s = setup(&ModelParams::default());
    let rel = (s.det.d_prime_hat - s.d0) / s.d0.abs();
    assert!(rel.abs() < 0.05, "{rel}");
    assert!(s.det.scan.iter().any(|&(_, g)| g > 0.0) && s.det.scan.iter().any(|&(_, g)| g < 0.0));
    let out = detect_bifurcation(&s.pr, &s.uni, (0.7 * s.d0, 0.5 * s.d0), 6);
    assert!(matches!(out, Err(Error::NotBracketed)));
}

#[test]
fn critical_eigenvector_matches_series_mode() {
    let p = ModelParams::default();
    let s = setup(&p);
    let g = &s.pr.grid;
    let ctx = SeriesContext::new(&p, &s.pr.steady, std::f64::consts::PI / p.l, s.d0, 16);
    let q = q_table(&ctx, 2, 16).unwrap();
    let eta: Vec<f64> = g.u.iter().map(|&u| eval_series(&q, ctx.u_star, p.lambda, u, 2, 16, p.epsilon, true).value).collect();
    let v = &s.det.eigenvector[..g.nu];
    let dot: f64 = eta.iter().zip(v).zip(&g.du).map(|((a, b), w)| a * b * w).sum();
    let na: f64 = eta.iter().zip(&g.du).map(|(a, w)| a * a * w).sum::<f64>().sqrt();
    let nb: f64 = v.iter().zip(&g.du).map(|(a, w)| a * a * w).sum::<f64>().sqrt();
    let corr = (dot / (na * nb)).abs();
    assert!(corr > 0.99, "{corr}");
}

#[test]
fn plus_and_minus_branches_are_mirror_images() {
    let s = setup(&ModelParams::default());
    let opts = SolverOptions::default();
    let amp = 0.02 * s.pr.params.rho_star;
    let (fp, dp) = switch_branch(&s.pr, &s.uni, &s.det, 1.0, amp, &opts).unwrap();
    let (fm, dm) = switch_branch(&s.pr, &s.uni, &s.det, -1.0, amp, &opts).unwrap();
    assert!((dp - dm).abs() < 1e-9 * dp.abs(), "{dp} {dm}");
    let r = fp.reflected();
    let err = r.z.iter().zip(&fm.z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = fp.z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-8 * scale, "{err}");
    let op = s.pr.with_dprime(dp).observables(&fp);
    assert!(op.rho_ends.0 > op.rho_ends.1);
    let om = s.pr.with_dprime(dm).observables(&fm);
    assert!(om.rho_ends.0 < om.rho_ends.1);
}

#[test]
fn reflected_steady_state_resolves_with_equal_residual() {
    let s = setup(&ModelParams::default());
    let opts = SolverOptions::default();
    let (f, d) = switch_branch(&s.pr, &s.uni, &s.det, 1.0, 0.02 * s.pr.params.rho_star, &opts).unwrap();
    let pr = s.pr.with_dprime(d);
    let a = newton_steady(&pr, &f, &opts).unwrap();
    let b = newton_steady(&pr, &a.field.reflected(), &opts).unwrap();
    assert!(a.residual < 1e-9 && b.residual < 1e-9);
    let ob = pr.observables(&b.field);
    let oa = pr.observables(&a.field);
    assert!((oa.mode1 + ob.mode1).abs() < 1e-8 * oa.mode1.abs(), "{} {}", oa.mode1, ob.mode1);
}

#[test]
fn supercritical_branch_opens_below_threshold() {
    let p = ModelParams::default();
    let s = setup(&p);
    let offs = window_offsets(s.d0, 1e-3, 2e-2, 6);
    let pts = sample_window(&s.pr, &s.uni, &s.det, 1.0, &offs, s.b, &SolverOptions::default()).unwrap();
    for q in &pts {
        assert!(q.d_prime_star < s.det.d_prime_hat, "{} {}", q.d_prime_star, s.det.d_prime_hat);
        assert!(q.amplitude > 0.0);
    }
    let data: Vec<(f64, f64)> = pts.iter().map(|q| (s.det.d_prime_hat - q.d_prime_star, q.delta_rho)).collect();
    let (slope, _) = fit_exponent(&data).unwrap();
    assert!((slope - 0.5).abs() < 0.05, "{slope}");
}

#[test]
fn subcritical_branch_opens_above_threshold_and_folds() {
    let p = ModelParams::default().with_rho(0.3);
    let s = setup(&p);
    assert!(analyse(&p).unwrap().mu < 0.0);
    let opts = SolverOptions::default();
    let (f, d) = switch_branch(&s.pr, &s.uni, &s.det, 1.0, 0.02 * p.rho_star, &opts).unwrap();
    assert!(d > s.det.d_prime_hat, "{d} {}", s.det.d_prime_hat);
    let policy = StepPolicy { max_points: 60, ..StepPolicy::default() };
    let range = (1.2 * s.d0, 0.7 * s.d0);
    let br = continue_branch(&s.pr.with_dprime(d), &f, BranchLabel::Plus, range, 1.0, &policy, &opts).unwrap();
    assert!(!br.folds.is_empty(), "{:?}", br.status);
    let fold = br.folds[0];
    assert!(fold > s.det.d_prime_hat && fold < 0.9 * s.det.d_prime_hat, "{fold}");
    let grows = br.points.windows(2).filter(|w| w[1].delta_rho > w[0].delta_rho).count();
    assert!(grows + 1 >= br.points.len() / 2);
}

#[test]
fn predicted_profile_converges_near_the_prediction() {
    let p = ModelParams::default();
    let s = setup(&p);
    let rep = analyse(&p).unwrap();
    let d = s.det.d_prime_hat - 0.01 * s.d0.abs();
    let pred = rep.branch_prediction(s.d0 - 0.01 * s.d0.abs()).unwrap();
    let pr = s.pr.with_dprime(d);
    let guess = mode_guess(&pr, &s.uni, &s.det.eigenvector, 0.5 * pred.delta_rho());
    let out = newton_steady(&pr, &guess, &SolverOptions::default()).unwrap();
    let dr = pr.observables(&out.field).delta_rho;
    let rel = (dr - pred.delta_rho()) / pred.delta_rho();
    assert!(rel.abs() < 0.2, "{dr} {} {rel}", pred.delta_rho());
}

#[test]
fn uniform_branch_stays_flat() {
    let s = setup(&ModelParams::default());
    let opts = SolverOptions::default();
    let start = s.pr.with_dprime(0.8 * s.d0);
    let policy = StepPolicy { max_points: 12, ds0: 0.05, ..StepPolicy::default() };
    let br = continue_branch(&start, &s.uni, BranchLabel::Uniform, (1.2 * s.d0, 0.7 * s.d0), -1.0, &policy, &opts).unwrap();
    assert!(br.points.len() > 3);
    assert!(br.points.last().unwrap().d_prime_star < br.points[0].d_prime_star);
    for q in &br.points {
        assert!(q.delta_rho < 1e-8, "{}", q.delta_rho);
    }
}

#[test]
fn patterned_peaks_follow_the_local_signal() {
    let p = ModelParams::default();
    let s = setup(&p);
    let d = s.det.d_prime_hat - 0.05 * s.d0.abs();
    let pr = s.pr.with_dprime(d);
    let guess = mode_guess(&pr, &s.uni, &s.det.eigenvector, 0.1 * p.rho_star);
    let f = newton_steady(&pr, &guess, &SolverOptions::default()).unwrap().field;
    let g = &pr.grid;
    let tol = 3.0 * (p.epsilon / p.lambda).sqrt();
    for i in [0, g.nx - 1] {
        let j = (0..g.nu).max_by(|&a, &b| f.n(i, a).total_cmp(&f.n(i, b))).unwrap();
        let target = p.g(f.c(i), 0) / p.lambda;
        assert!((g.u[j] - target).abs() < tol, "cell {i}: peak {} target {target}", g.u[j]);
    }
}

#[test]
fn onset_branch_is_stable() {
    let s = setup(&ModelParams::default());
    let opts = SolverOptions::default();
    let base = s.pr.with_dprime(s.det.d_prime_hat);
    let amp = 0.05 * s.pr.params.rho_star;
    let guess = mode_guess(&base, &s.uni, &s.det.eigenvector, amp);
    let (f, d, _) = solve_pinned(&base, &guess, amp, &opts).unwrap();
    let pr = s.pr.with_dprime(d);
    assert!(pr.observables(&f).delta_rho > 1e-3);
    assert!(probe_stability(&pr, &f, &s.uni, 40, 2.0, &opts).unwrap());
    assert!(sector_leading(&pr, &s.uni, 1) > 0.0);
}
