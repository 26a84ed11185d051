//! Steady-state continuation in D'_*: the uniform branch, detection of the pitchfork on it,
//! switching onto the patterned branches and fitting the square-root law.

use nalgebra::DMatrix;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::pde::{newton_solve, Constraint, Field, Problem, SolverOptions, Stepper, TimeScheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchLabel {
    Uniform,
    Plus,
    Minus,
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchPoint {
    pub d_prime_star: f64,
    pub delta_rho: f64,
    /// signed cos(pi x/L) coefficient of rho
    pub amplitude: f64,
    pub stable: Option<bool>,
    pub s: f64,
    pub residual: f64,
    #[serde(skip)]
    pub field: Option<Field>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchStatus {
    Complete,
    StepUnderflow,
    MaxPoints,
}

#[derive(Clone, Debug, Serialize)]
pub struct Branch {
    pub label: BranchLabel,
    pub points: Vec<BranchPoint>,
    pub status: BranchStatus,
    /// D'_* values where the tangent's parameter component changes sign
    pub folds: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepPolicy {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_points: usize,
    /// Newton iterations at or below which the step is doubled
    pub easy_iters: usize,
    /// ... and at or above which it is halved
    pub hard_iters: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { ds0: 1e-2, ds_min: 1e-5, ds_max: 1e-1, max_points: 200, easy_iters: 3, hard_iters: 8 }
    }
}

/// Weighted inner product used for arclength: n entries are scaled by their cell mass.
fn arc_weights(p: &Problem) -> Vec<f64> {
    let g = &p.grid;
    let mut w = g.mass_weights();
    for i in 0..g.nx {
        w[g.cidx(i)] = g.h;
    }
    let tot: f64 = w.iter().sum();
    w.iter().map(|v| v / tot).collect()
}

/// Row computing the cos(pi x/L) coefficient of rho from z.
pub fn amplitude_row(p: &Problem) -> Vec<f64> {
    let g = &p.grid;
    let mut r = vec![0.0; g.len()];
    for i in 0..g.nx {
        let cx = (PI * g.x[i] / g.l).cos();
        for j in 0..g.nu {
            r[g.idx(i, j)] = 2.0 / g.l * g.h * g.du[j] * cx;
        }
    }
    r
}

fn point(p: &Problem, f: &Field, d: f64, s: f64, residual: f64, stable: Option<bool>, keep: bool) -> BranchPoint {
    let ob = p.observables(f);
    BranchPoint { d_prime_star: d, delta_rho: ob.delta_rho, amplitude: ob.mode1, stable, s, residual, field: keep.then(|| f.clone()) }
}

/// Keller pseudo-arclength continuation from a converged state.
///
/// `direction` orients the initial tangent by the sign of its D'_* component.
pub fn continue_branch(
    problem: &Problem,
    start: &Field,
    label: BranchLabel,
    range: (f64, f64),
    direction: f64,
    policy: &StepPolicy,
    opts: &SolverOptions,
) -> Result<Branch> {
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let aw = arc_weights(problem);
    let mut pr = problem.clone();
    let first = newton_solve(&pr, start, None, opts)?;
    let mut z = first.field.clone();
    let mut p = pr.d_prime();
    let mut pts = vec![point(&pr, &z, p, 0.0, first.residual, None, true)];
    let (mut tz, mut tp) = initial_tangent(&pr, &z, direction)?;
    normalise(&aw, &mut tz, &mut tp);
    let mut ds = policy.ds0;
    let mut s = 0.0;
    let mut folds = Vec::new();
    let mut status = BranchStatus::MaxPoints;
    while pts.len() < policy.max_points {
        let pred_z: Vec<f64> = z.z.iter().zip(&tz).map(|(a, t)| a + ds * t).collect();
        let pred_p = p + ds * tp;
        let row: Vec<f64> = tz.iter().zip(&aw).map(|(t, w)| t * w).collect();
        let cn = Constraint { row: row.clone(), dp: tp, value: dot(&row, &z.z) + tp * p + ds };
        let guess = Field { z: pred_z, ..z.clone() };
        match newton_solve(&pr.with_dprime(pred_p), &guess, Some(&cn), &SolverOptions { newton_max_iter: policy.hard_iters.max(10), ..opts.clone() }) {
            Ok(out) => {
                let mut nz: Vec<f64> = out.field.z.iter().zip(&z.z).map(|(a, b)| (a - b) / ds).collect();
                let mut np = (out.d_prime - p) / ds;
                normalise(&aw, &mut nz, &mut np);
                if np * tp < 0.0 {
                    folds.push(out.d_prime);
                }
                s += ds;
                z = out.field;
                p = out.d_prime;
                pr = pr.with_dprime(p);
                tz = nz;
                tp = np;
                pts.push(point(&pr, &z, p, s, out.residual, None, true));
                if out.iterations <= policy.easy_iters {
                    ds = (2.0 * ds).min(policy.ds_max);
                } else if out.iterations >= policy.hard_iters {
                    ds *= 0.5;
                }
                if p < lo || p > hi {
                    status = BranchStatus::Complete;
                    break;
                }
            }
            Err(_) => {
                ds *= 0.5;
                if ds < policy.ds_min {
                    status = BranchStatus::StepUnderflow;
                    break;
                }
            }
        }
    }
    Ok(Branch { label, points: pts, status, folds })
}

fn normalise(w: &[f64], tz: &mut [f64], tp: &mut f64) {
    let nrm = (tz.iter().zip(w).map(|(t, w)| w * t * t).sum::<f64>() + *tp * *tp).sqrt();
    for t in tz.iter_mut() {
        *t /= nrm;
    }
    *tp /= nrm;
}

/// Solves J tz = -F_p with the mass of tz fixed at zero and tp = 1.
fn initial_tangent(pr: &Problem, f: &Field, direction: f64) -> Result<(Vec<f64>, f64)> {
    let g = &pr.grid;
    let z = &f.z;
    let w = g.mass_weights();
    let r_row = (0..g.nu).max_by(|&a, &b| z[g.idx(0, a)].total_cmp(&z[g.idx(0, b)])).unwrap_or(0);
    let r_row = g.idx(0, r_row);
    let mut a = pr.jacobian(z);
    a.clear_row(r_row);
    a.set(r_row, r_row, 1.0);
    let mut rhs: Vec<f64> = pr.residual_dprime(z).iter().map(|v| -v).collect();
    rhs[r_row] = 0.0;
    let mut e = vec![0.0; g.len()];
    e[r_row] = 1.0;
    let mut mrow = w;
    mrow[r_row] -= 1.0;
    let bs = crate::linalg::Bordered::new(a.factor()?, vec![e], vec![mrow], DMatrix::from_element(1, 1, -1.0))?;
    let (tz, _) = bs.solve(&rhs, &[0.0]);
    let sgn = if direction < 0.0 { -1.0 } else { 1.0 };
    Ok((tz.iter().map(|v| sgn * v).collect(), sgn))
}

/// Leading eigenvalues of the uniform state's linearisation, one per cos mode.
#[derive(Clone, Debug, Serialize)]
pub struct SectorSpectrum {
    pub d_prime_star: f64,
    /// (mode, max Re sigma)
    pub leading: Vec<(usize, f64)>,
}

pub fn sector_leading(pr: &Problem, uniform: &Field, mode: usize) -> f64 {
    let a = pr.sector_matrix(uniform, mode);
    a.complex_eigenvalues().iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.re))
}

pub fn uniform_spectrum(pr: &Problem, uniform: &Field, modes: &[usize]) -> SectorSpectrum {
    SectorSpectrum { d_prime_star: pr.d_prime(), leading: modes.iter().map(|&m| (m, sector_leading(pr, uniform, m))).collect() }
}

#[derive(Clone, Debug, Serialize)]
pub struct Detection {
    pub d_prime_hat: f64,
    /// (D'_*, leading sigma of mode 1) along the scan
    pub scan: Vec<(f64, f64)>,
    /// critical eigenvector in the sector: n(u) weights then c
    #[serde(skip)]
    pub eigenvector: Vec<f64>,
}

/// Sign change of the leading mode-1 eigenvalue along the uniform branch, refined by bisection.
pub fn detect_bifurcation(problem: &Problem, uniform: &Field, range: (f64, f64), n_scan: usize) -> Result<Detection> {
    let grid_pts: Vec<f64> = (0..=n_scan).map(|k| range.0 + (range.1 - range.0) * k as f64 / n_scan as f64).collect();
    let sig = |d: f64| sector_leading(&problem.with_dprime(d), uniform, 1);
    let scan: Vec<(f64, f64)> = crate::exec::map(&grid_pts, |&d| (d, sig(d)));
    let idx = (1..scan.len()).find(|&k| scan[k - 1].1 * scan[k].1 <= 0.0).ok_or(Error::NotBracketed)?;
    let (mut a, mut b) = (scan[idx - 1].0, scan[idx].0);
    let mut fa = scan[idx - 1].1;
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        let fm = sig(m);
        if fm * fa > 0.0 {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
        if (b - a).abs() < 1e-13 * a.abs().max(1.0) {
            break;
        }
    }
    let d_hat = 0.5 * (a + b);
    let ev = critical_vector(&problem.with_dprime(d_hat), uniform, 0.0)?;
    Ok(Detection { d_prime_hat: d_hat, scan, eigenvector: ev })
}

/// Shift-invert power iteration on the mode-1 sector operator.
pub fn critical_vector(pr: &Problem, uniform: &Field, shift: f64) -> Result<Vec<f64>> {
    let mut a = pr.sector_matrix(uniform, 1);
    let n = a.nrows();
    for k in 0..n {
        a[(k, k)] -= shift;
    }
    let lu = a.lu();
    let mut v = nalgebra::DVector::from_element(n, 1.0);
    for _ in 0..50 {
        let nv = lu.solve(&v).ok_or_else(|| Error::LinearSolve("singular sector matrix".into()))?;
        let nrm = nv.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            break;
        }
        v = nv / nrm;
    }
    Ok(v.iter().copied().collect())
}

/// Steady state on a patterned branch with the cos-mode amplitude of rho pinned to `amp`.
pub fn solve_pinned(problem: &Problem, guess: &Field, amp: f64, opts: &SolverOptions) -> Result<(Field, f64, usize)> {
    let row = amplitude_row(problem);
    let cn = Constraint { row, dp: 0.0, value: amp };
    let out = newton_solve(problem, guess, Some(&cn), opts)?;
    Ok((out.field, out.d_prime, out.iterations))
}

/// Uniform state plus `amp` times the critical mode, scaled so the rho cos-coefficient is `amp`.
pub fn mode_guess(problem: &Problem, uniform: &Field, eigvec: &[f64], amp: f64) -> Field {
    let g = &problem.grid;
    let mass: f64 = (0..g.nu).map(|j| eigvec[j] * g.du[j]).sum();
    let scale = amp / mass;
    let mut f = uniform.clone();
    for i in 0..g.nx {
        let cx = (PI * g.x[i] / g.l).cos();
        for j in 0..=g.nu {
            f.z[i * g.m() + j] += scale * cx * eigvec[j];
        }
    }
    f
}

/// Switches onto the +/- branch at the detected pitchfork. "+" has rho(0) > rho(L).
pub fn switch_branch(problem: &Problem, uniform: &Field, det: &Detection, sign: f64, amp: f64, opts: &SolverOptions) -> Result<(Field, f64)> {
    let pr = problem.with_dprime(det.d_prime_hat);
    let mut a = amp.abs();
    for _ in 0..4 {
        let guess = mode_guess(&pr, uniform, &det.eigenvector, sign.signum() * a);
        if let Ok((f, d, _)) = solve_pinned(&pr, &guess, sign.signum() * a, opts) {
            if pr.observables(&f).delta_rho > 0.5 * a {
                return Ok((f, d));
            }
        }
        a *= 2.0;
    }
    Err(Error::NewtonFailed { iters: opts.newton_max_iter, residual: f64::NAN })
}

/// Branch points at amplitudes chosen so that |D'_* - D_hat| lands near the requested offsets.
pub fn sample_window(problem: &Problem, uniform: &Field, det: &Detection, sign: f64, offsets: &[f64], b_guess: f64, opts: &SolverOptions) -> Result<Vec<BranchPoint>> {
    let rho = problem.params.rho_star;
    let pr = problem.with_dprime(det.d_prime_hat);
    let mut b_est = b_guess.abs().max(1e-3);
    let mut prev: Option<Field> = None;
    let mut out = Vec::new();
    let mut sorted = offsets.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    for &off in &sorted {
        // delta_rho = 2 |a| = rho b sqrt(off)
        let amp = sign.signum() * 0.5 * rho * b_est * off.sqrt();
        let guess = match &prev {
            Some(f) => {
                let a0 = dot(&amplitude_row(&pr), &f.z);
                let mut g = f.clone();
                for (gz, uz) in g.z.iter_mut().zip(&uniform.z) {
                    *gz = uz + (*gz - uz) * amp / a0;
                }
                g
            }
            None => mode_guess(&pr, uniform, &det.eigenvector, amp),
        };
        let start_p = out.last().map(|p: &BranchPoint| p.d_prime_star).unwrap_or(det.d_prime_hat);
        let (f, d, _) = solve_pinned(&pr.with_dprime(start_p), &guess, amp, opts)?;
        let bp = point(&pr.with_dprime(d), &f, d, 0.0, 0.0, None, false);
        let dd = (d - det.d_prime_hat).abs();
        if dd > 0.0 {
            b_est = bp.delta_rho / rho / dd.sqrt();
        }
        out.push(bp);
        prev = Some(f);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PitchforkFit {
    pub d_prime_bif_hat: f64,
    pub b_hat: f64,
    /// coefficient of |d|^{3/2}
    pub b3: f64,
    pub fit_window: (f64, f64),
    pub fit_residual: f64,
    pub n_points: usize,
}

/// Least squares of delta_rho / rho* = b sqrt|d| + b3 |d|^{3/2}, d = D'_* - D_hat.
pub fn fit_b(points: &[BranchPoint], d_hat: f64, rho_star: f64, window: f64) -> Result<PitchforkFit> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .map(|p| ((p.d_prime_star - d_hat).abs(), p.delta_rho / rho_star))
        .filter(|(d, _)| *d > 0.0 && *d <= window)
        .collect();
    if data.len() < 6 {
        return Err(Error::Fit(format!("{} points in window, need 6", data.len())));
    }
    let a = DMatrix::from_fn(data.len(), 2, |r, c| if c == 0 { data[r].0.sqrt() } else { data[r].0.powf(1.5) });
    let y = nalgebra::DVector::from_iterator(data.len(), data.iter().map(|d| d.1));
    let sol = a.clone().svd(true, true).solve(&y, 1e-14).map_err(|e| Error::Fit(e.to_string()))?;
    let res = (&a * &sol - &y).norm() / y.norm();
    let lo = data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let hi = data.iter().map(|d| d.0).fold(0.0, f64::max);
    Ok(PitchforkFit { d_prime_bif_hat: d_hat, b_hat: sol[0], b3: sol[1], fit_window: (lo, hi), fit_residual: res, n_points: data.len() })
}

/// Pure square-root fit, no correction term.
pub fn fit_b_leading(points: &[(f64, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Fit("no points".into()));
    }
    let num: f64 = points.iter().map(|(d, y)| d.sqrt() * y).sum();
    let den: f64 = points.iter().map(|(d, _)| *d).sum();
    Ok(num / den)
}

/// Slope of log(delta_rho) against log|d|: the branch exponent.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(d, y)| *d > 0.0 && *y > 0.0).map(|(d, y)| (d.ln(), y.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::Fit("need 3 points".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, (my - slope * mx).exp()))
}

/// Default window offsets: `count` values log-spaced in [lo, hi] * |D'_0|.
pub fn window_offsets(d0: f64, lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| d0.abs() * (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (count.max(2) - 1) as f64).exp())
        .collect()
}

/// Time-stepping probe: perturbs the state along the amplitude direction and reports whether
/// the deviation shrinks over `steps` implicit steps.
pub fn probe_stability(problem: &Problem, state: &Field, uniform: &Field, steps: usize, dt: f64, opts: &SolverOptions) -> Result<bool> {
    let row = amplitude_row(problem);
    let a_s = dot(&row, &state.z);
    let mut pert = state.clone();
    let diff: Vec<f64> = state.z.iter().zip(&uniform.z).map(|(a, b)| a - b).collect();
    let nd = norm2(&diff);
    let kick = if nd > 0.0 { 1e-3 } else { 0.0 };
    if kick == 0.0 {
        return Ok(true);
    }
    for (p, d) in pert.z.iter_mut().zip(&diff) {
        *p += kick * d;
    }
    let mut st = Stepper::new(problem.clone(), SolverOptions { dt, scheme: TimeScheme::ImplicitEuler, ..opts.clone() })?;
    let mut devs = Vec::new();
    st.run(&pert, steps, |f| devs.push((dot(&row, &f.z) - a_s).abs()))?;
    let early = devs[steps.min(devs.len()) / 5];
    let late = *devs.last().unwrap_or(&early);
    Ok(late < early)
}
