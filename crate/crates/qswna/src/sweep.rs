//! Parameter sweeps: epsilon scaling of the detected pitchfork and of b, criticality checks
//! along rho*, and the (rho*, D'_*) phase diagram by relaxation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::continuation::{amplitude_row, detect_bifurcation, fit_b, fit_exponent, sample_window, solve_pinned, mode_guess, window_offsets, PitchforkFit};
use crate::dispersion::critical_dprime;
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{dot, norm_inf};
use crate::params::ModelParams;
use crate::pde::{Field, GridSpec, Problem, SolverOptions, Stepper, TimeScheme};
use crate::wna::{analyse, mu_crossings, Criticality};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    RhoStar,
    DPrimeStar,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPlan {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// worker threads, 0 for the default pool
    pub threads: usize,
}

impl SweepPlan {
    /// Sorts the values ascending and rejects empty or non-finite lists.
    pub fn new(axis: SweepAxis, mut values: Vec<f64>, threads: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep values must be finite".into()));
        }
        values.sort_by(|a, b| a.total_cmp(b));
        values.dedup();
        Ok(Self { axis, values, threads })
    }
}

/// Numerical settings shared by every point of a continuation sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationJob {
    pub grid: GridSpec,
    pub solver: SolverOptions,
    /// detection scan over [lo, hi] * D'_0
    pub scan: (f64, f64),
    pub n_scan: usize,
    /// branch sampling offsets, log-spaced in [lo, hi] * |D'_0|
    pub window: (f64, f64),
    pub window_points: usize,
}

impl Default for ContinuationJob {
    fn default() -> Self {
        Self { grid: GridSpec::default(), solver: SolverOptions::default(), scan: (1.3, 0.7), n_scan: 12, window: (1e-4, 1e-2), window_points: 10 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsilonPoint {
    pub epsilon: f64,
    pub d_prime_hat: Option<f64>,
    pub b_hat: Option<f64>,
    /// (D_hat - D'_0) / |D'_0|
    pub d_rel_error: Option<f64>,
    /// (b_hat - b) / b
    pub b_rel_error: Option<f64>,
    /// local exponent of delta_rho against |D'_* - D_hat| on the inner half of the window
    pub exponent: Option<f64>,
    pub fit: Option<PitchforkFit>,
    pub failure: Option<String>,
}

/// y = slope * x, with R^2 measured about the mean of y.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OriginFit {
    pub slope: f64,
    pub r_squared: f64,
}

pub fn fit_through_origin(points: &[(f64, f64)]) -> Result<OriginFit> {
    if points.len() < 2 {
        return Err(Error::Fit("need two points".into()));
    }
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all x are zero".into()));
    }
    let slope = points.iter().map(|p| p.0 * p.1).sum::<f64>() / sxx;
    let my = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    Ok(OriginFit { slope, r_squared })
}

/// |y| strictly decreasing as x decreases.
pub fn shrinks_with_x(points: &[(f64, f64)]) -> bool {
    let mut v = points.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v.windows(2).all(|w| w[0].1.abs() < w[1].1.abs())
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsilonScaling {
    pub d_prime_theory: f64,
    pub b_theory: f64,
    pub points: Vec<EpsilonPoint>,
    pub d_fit: Option<OriginFit>,
    pub b_fit: Option<OriginFit>,
    pub d_monotone: bool,
    pub b_monotone: bool,
}

fn epsilon_point(base: &ModelParams, eps: f64, d0: f64, b: f64, job: &ContinuationJob) -> Result<EpsilonPoint> {
    let p = base.with_epsilon(eps);
    let pr = Problem::new(&p, &job.grid)?;
    let uni = pr.uniform_state()?;
    let det = detect_bifurcation(&pr, &uni, (job.scan.0 * d0, job.scan.1 * d0), job.n_scan)?;
    let offs = window_offsets(d0, job.window.0, job.window.1, job.window_points);
    let pts = sample_window(&pr, &uni, &det, 1.0, &offs, b, &job.solver)?;
    let fit = fit_b(&pts, det.d_prime_hat, p.rho_star, f64::INFINITY)?;
    let inner: Vec<(f64, f64)> = pts.iter().take(pts.len().div_ceil(2)).map(|q| ((q.d_prime_star - det.d_prime_hat).abs(), q.delta_rho)).collect();
    Ok(EpsilonPoint {
        epsilon: eps,
        d_prime_hat: Some(det.d_prime_hat),
        b_hat: Some(fit.b_hat),
        d_rel_error: Some((det.d_prime_hat - d0) / d0.abs()),
        b_rel_error: Some((fit.b_hat - b) / b),
        exponent: fit_exponent(&inner).ok().map(|e| e.0),
        fit: Some(fit),
        failure: None,
    })
}

/// Detects the pitchfork and fits b at each epsilon, against the leading-order theory
/// (computed once). Failed points are recorded and skipped by the fits.
pub fn run_epsilon_scaling(base: &ModelParams, plan: &SweepPlan, job: &ContinuationJob) -> Result<EpsilonScaling> {
    if plan.axis != SweepAxis::Epsilon {
        return Err(Error::Config("epsilon scaling needs an epsilon sweep".into()));
    }
    if plan.values.len() < 3 {
        return Err(Error::Config("epsilon scaling needs at least three values".into()));
    }
    let rep = analyse(base)?;
    let (d0, b) = (rep.d_prime_critical, rep.b);
    if rep.criticality != Criticality::Supercritical {
        return Err(Error::Precondition("epsilon scaling needs a supercritical pitchfork".into()));
    }
    let points = exec::with_threads(plan.threads, || {
        exec::map(&plan.values, |&eps| {
            epsilon_point(base, eps, d0, b, job).unwrap_or_else(|e| EpsilonPoint {
                epsilon: eps,
                d_prime_hat: None,
                b_hat: None,
                d_rel_error: None,
                b_rel_error: None,
                exponent: None,
                fit: None,
                failure: Some(e.to_string()),
            })
        })
    });
    let series = |f: fn(&EpsilonPoint) -> Option<f64>| -> Vec<(f64, f64)> { points.iter().filter_map(|q| f(q).map(|v| (q.epsilon, v))).collect() };
    let ds = series(|q| q.d_rel_error);
    let bs = series(|q| q.b_rel_error);
    Ok(EpsilonScaling {
        d_prime_theory: d0,
        b_theory: b,
        d_fit: fit_through_origin(&ds).ok(),
        b_fit: fit_through_origin(&bs).ok(),
        d_monotone: ds.len() == points.len() && shrinks_with_x(&ds),
        b_monotone: bs.len() == points.len() && shrinks_with_x(&bs),
        points,
    })
}

/// Which side of D_hat a small-amplitude patterned state sits on, compared with the sign of mu.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalityPoint {
    pub rho_star: f64,
    pub mu: f64,
    pub predicted: Criticality,
    pub d_prime_hat: Option<f64>,
    /// D'_* - D_hat on the branch at the probe amplitude
    pub branch_offset: Option<f64>,
    pub agrees: Option<bool>,
    pub failure: Option<String>,
}

/// For each rho*, solves for the patterned state with a small pinned amplitude and
/// reads off which side of the detected threshold it lies on.
///
/// Supercritical branches open towards D'_* < D_hat (more negative), subcritical ones away.
pub fn run_criticality_scan(base: &ModelParams, plan: &SweepPlan, job: &ContinuationJob, amp_frac: f64) -> Result<Vec<CriticalityPoint>> {
    if plan.axis != SweepAxis::RhoStar {
        return Err(Error::Config("criticality scan needs a rho_star sweep".into()));
    }
    let one = |&rho: &f64| -> CriticalityPoint {
        let p = base.with_rho(rho);
        let mut cp = CriticalityPoint { rho_star: rho, mu: f64::NAN, predicted: Criticality::Degenerate, d_prime_hat: None, branch_offset: None, agrees: None, failure: None };
        let run = |cp: &mut CriticalityPoint| -> Result<()> {
            let rep = analyse(&p)?;
            cp.mu = rep.mu;
            cp.predicted = rep.criticality;
            let d0 = rep.d_prime_critical;
            let pr = Problem::new(&p, &job.grid)?;
            let uni = pr.uniform_state()?;
            let det = detect_bifurcation(&pr, &uni, (job.scan.0 * d0, job.scan.1 * d0), job.n_scan)?;
            cp.d_prime_hat = Some(det.d_prime_hat);
            let at = pr.with_dprime(det.d_prime_hat);
            let amp = amp_frac * rho;
            let guess = mode_guess(&at, &uni, &det.eigenvector, amp);
            let (_, d, _) = solve_pinned(&at, &guess, amp, &job.solver)?;
            let off = d - det.d_prime_hat;
            cp.branch_offset = Some(off);
            cp.agrees = match rep.criticality {
                Criticality::Supercritical => Some(off < 0.0),
                Criticality::Subcritical => Some(off > 0.0),
                Criticality::Degenerate => None,
            };
            Ok(())
        };
        if let Err(e) = run(&mut cp) {
            cp.failure = Some(e.to_string());
        }
        cp
    };
    Ok(exec::with_threads(plan.threads, || exec::map(&plan.values, one)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseJob {
    pub grid: GridSpec,
    pub dt: f64,
    pub t_max: f64,
    /// stop when max |dz/dt| falls below this
    pub tol: f64,
    /// relative cos-mode amplitude of the initial perturbation of n
    pub seed_amplitude: f64,
    pub seed: u64,
}

impl Default for PhaseJob {
    fn default() -> Self {
        Self { grid: GridSpec { nx: 16, nu: 80, ..GridSpec::default() }, dt: 0.5, t_max: 2000.0, tol: 1e-7, seed_amplitude: 0.01, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhasePoint {
    pub rho_star: f64,
    pub d_prime_star: f64,
    /// final delta_rho / rho*
    pub order_parameter: Option<f64>,
    pub time: Option<f64>,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseDiagram {
    pub rho_values: Vec<f64>,
    pub d_prime_values: Vec<f64>,
    /// row-major over (rho, D'_*)
    pub points: Vec<PhasePoint>,
    /// (rho*, D'_0(rho*)) where the uniform state exists
    pub critical_curve: Vec<(f64, f64)>,
    pub mu_crossings: Vec<f64>,
}

/// Uniform state with n multiplied by 1 + a (cos(pi x/L) + small random higher modes).
pub fn seeded_perturbation(problem: &Problem, uniform: &Field, amp: f64, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w2: f64 = rng.random_range(-0.1..0.1);
    let w3: f64 = rng.random_range(-0.1..0.1);
    let g = &problem.grid;
    let mut f = uniform.clone();
    for i in 0..g.nx {
        let t = PI * g.x[i] / g.l;
        let s = 1.0 + amp * (t.cos() + w2 * (2.0 * t).cos() + w3 * (3.0 * t).cos());
        for j in 0..g.nu {
            f.z[g.idx(i, j)] *= s;
        }
    }
    f
}

/// Implicit Euler from `start` until the time derivative is below `tol` or `t_max` is reached.
///
/// Steps start at dt/64 and double after every 4 accepted steps up to dt; a failed
/// step is retried at half the size.
pub fn relax(problem: &Problem, start: &Field, dt: f64, t_max: f64, tol: f64) -> Result<(Field, bool)> {
    let stepper = |h: f64| Stepper::new(problem.clone(), SolverOptions { dt: h, scheme: TimeScheme::ImplicitEuler, ..SolverOptions::default() });
    let mut h = dt / 64.0;
    let mut st = stepper(h)?;
    let mut cur = start.clone();
    let mut streak = 0;
    while cur.time < t_max {
        match st.step(&cur) {
            Ok(next) => {
                let rate = next.z.iter().zip(&cur.z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / h;
                cur = next;
                if rate < tol && h == dt {
                    return Ok((cur, true));
                }
                streak += 1;
                if streak >= 4 && h < dt {
                    h = (2.0 * h).min(dt);
                    st = stepper(h)?;
                    streak = 0;
                }
            }
            Err(e) => {
                h *= 0.5;
                if h < dt * 1e-6 {
                    return Err(e);
                }
                st = stepper(h)?;
                streak = 0;
            }
        }
    }
    Ok((cur, false))
}

/// Relaxes a perturbed uniform state at every (rho*, D'_*) pair.
pub fn run_phase_diagram(base: &ModelParams, rho_plan: &SweepPlan, dprime_plan: &SweepPlan, job: &PhaseJob) -> Result<PhaseDiagram> {
    if rho_plan.axis != SweepAxis::RhoStar || dprime_plan.axis != SweepAxis::DPrimeStar {
        return Err(Error::Config("phase diagram needs a rho_star and a D_prime_star sweep".into()));
    }
    let pairs: Vec<(f64, f64)> = rho_plan.values.iter().flat_map(|&r| dprime_plan.values.iter().map(move |&d| (r, d))).collect();
    let one = |&(rho, dp): &(f64, f64)| -> PhasePoint {
        let mut pt = PhasePoint { rho_star: rho, d_prime_star: dp, order_parameter: None, time: None, converged: false, failure: None };
        let run = || -> Result<(f64, f64, bool)> {
            let p = base.with_rho(rho).with_dprime(dp);
            let pr = Problem::new(&p, &job.grid)?;
            let uni = pr.uniform_state()?;
            let start = seeded_perturbation(&pr, &uni, job.seed_amplitude, job.seed);
            let (end, ok) = relax(&pr, &start, job.dt, job.t_max, job.tol)?;
            Ok((pr.observables(&end).delta_rho / rho, end.time, ok))
        };
        match run() {
            Ok((op, t, ok)) => {
                pt.order_parameter = Some(op);
                pt.time = Some(t);
                pt.converged = ok;
            }
            Err(e) => pt.failure = Some(e.to_string()),
        }
        pt
    };
    let points = exec::with_threads(rho_plan.threads.max(dprime_plan.threads), || exec::map(&pairs, one));
    let critical_curve = rho_plan
        .values
        .iter()
        .filter_map(|&r| {
            let p = base.with_rho(r);
            let st = p.steady().ok()?;
            critical_dprime(&p, &st, p.k1()).ok().map(|d| (r, d))
        })
        .collect();
    let fine: Vec<f64> = if rho_plan.values.len() > 1 {
        let (lo, hi) = (rho_plan.values[0], *rho_plan.values.last().unwrap_or(&rho_plan.values[0]));
        (0..=40).map(|k| lo + (hi - lo) * k as f64 / 40.0).collect()
    } else {
        rho_plan.values.clone()
    };
    Ok(PhaseDiagram {
        rho_values: rho_plan.values.clone(),
        d_prime_values: dprime_plan.values.clone(),
        points,
        critical_curve,
        mu_crossings: mu_crossings(base, &fine),
    })
}

/// max |F| of a state and of its mirror image x -> L - x.
pub fn reflection_residuals(problem: &Problem, f: &Field) -> Result<(f64, f64)> {
    let a = norm_inf(&problem.residual(&f.z)?);
    let b = norm_inf(&problem.residual(&f.reflected().z)?);
    Ok((a, b))
}

/// Signed cos-mode amplitude of rho.
pub fn mode_amplitude(problem: &Problem, f: &Field) -> f64 {
    dot(&amplitude_row(problem), &f.z)
}
