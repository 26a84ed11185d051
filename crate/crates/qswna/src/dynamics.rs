//! Time-dependent experiments: linear growth of a cos perturbation and the nonlinear
//! saturation of the critical mode, compared against the dispersion cubic and the amplitude ODE.

use serde::Serialize;

use crate::continuation::{amplitude_row, mode_guess, Detection};
use crate::dispersion::growth_rates;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::pde::{Field, Problem, SolverOptions, Stepper, TimeScheme};
use crate::wna::WnaReport;

#[derive(Clone, Debug, Serialize)]
pub struct GrowthMeasurement {
    pub measured: f64,
    pub predicted: f64,
    pub rel_error: f64,
    /// (t, cos-mode amplitude of rho)
    pub trace: Vec<(f64, f64)>,
}

/// Steps a small cos(pi x/L) perturbation of the uniform state with implicit Euler and
/// reads off the growth rate from the last per-step amplification factor.
pub fn measure_growth_rate(problem: &Problem, uniform: &Field, amp: f64, dt: f64, steps: usize) -> Result<GrowthMeasurement> {
    let start = problem.perturbed(uniform, amp, 1);
    let row = amplitude_row(problem);
    let opts = SolverOptions { dt, scheme: TimeScheme::ImplicitEuler, ..SolverOptions::default() };
    let mut st = Stepper::new(problem.clone(), opts)?;
    let mut trace = vec![(0.0, dot(&row, &start.z))];
    st.run(&start, steps, |f| trace.push((f.time, dot(&row, &f.z))))?;
    let n = trace.len();
    if n < 3 {
        return Err(Error::Precondition("need at least two steps".into()));
    }
    let r = trace[n - 1].1 / trace[n - 2].1;
    // z_{n+1} = z_n / (1 - sigma dt) for an eigenmode
    let measured = (1.0 - 1.0 / r) / dt;
    let st0 = problem.params.steady()?;
    let predicted = growth_rates(&problem.params, &st0, problem.params.k1()).roots[0].re;
    Ok(GrowthMeasurement { measured, predicted, rel_error: (measured - predicted) / predicted.abs(), trace })
}

/// dA/dt = r A + c A^3.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LogisticFit {
    pub r: f64,
    pub c: f64,
    pub saturation: f64,
    pub residual: f64,
}

/// Least squares of (dA/dt)/A = r + c A^2 on a trace, with centred differences.
pub fn fit_logistic(trace: &[(f64, f64)]) -> Result<LogisticFit> {
    if trace.len() < 5 {
        return Err(Error::Fit("trace too short".into()));
    }
    let mut rows = Vec::new();
    for w in trace.windows(3) {
        let (t0, a0) = w[0];
        let (_, a1) = w[1];
        let (t2, a2) = w[2];
        if a1.abs() < 1e-300 {
            continue;
        }
        rows.push((a1 * a1, (a2 - a0) / (t2 - t0) / a1));
    }
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let sxx: f64 = rows.iter().map(|r| (r.0 - mx).powi(2)).sum();
    let sxy: f64 = rows.iter().map(|r| (r.0 - mx) * (r.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("amplitude does not vary".into()));
    }
    let c = sxy / sxx;
    let r = my - c * mx;
    let res = (rows.iter().map(|p| (p.1 - r - c * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(LogisticFit { r, c, saturation: if r * c < 0.0 { (-r / c).sqrt() } else { f64::NAN }, residual: res })
}

/// RK4 for dA/dt = r A + c A^3, sampled every dt.
pub fn integrate_amplitude_ode(r: f64, c: f64, a0: f64, dt: f64, steps: usize) -> Vec<(f64, f64)> {
    let f = |a: f64| r * a + c * a * a * a;
    let mut out = vec![(0.0, a0)];
    let mut a = a0;
    let sub = 20;
    let h = dt / sub as f64;
    for k in 1..=steps {
        for _ in 0..sub {
            let k1 = f(a);
            let k2 = f(a + 0.5 * h * k1);
            let k3 = f(a + 0.5 * h * k2);
            let k4 = f(a + h * k3);
            a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push((k as f64 * dt, a));
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SaturationComparison {
    pub d_prime_star: f64,
    pub d_prime_hat: f64,
    pub pde: LogisticFit,
    pub ode: LogisticFit,
    pub saturation_rel_error: f64,
    pub rate_rel_error: f64,
    pub pde_trace: Vec<(f64, f64)>,
    pub ode_trace: Vec<(f64, f64)>,
}

/// Runs the PDE from the uniform state plus a small critical-mode kick at
/// D'_* = D_hat + offset and compares with the amplitude equation at the same offset.
pub fn saturation_experiment(
    problem: &Problem,
    uniform: &Field,
    det: &Detection,
    report: &WnaReport,
    offset: f64,
    a0_frac: f64,
    dt: f64,
    t_end: f64,
) -> Result<SaturationComparison> {
    let d_star = det.d_prime_hat + offset;
    // amplitude ODE with the detected threshold: d' = D'_* - D_hat
    let (r_th, c_th) = report.rho_amplitude_ode(report.d_prime_critical + offset);
    if !(r_th > 0.0 && c_th < 0.0) {
        return Err(Error::Precondition("offset must sit on the supercritical unstable side".into()));
    }
    let a_sat = (-r_th / c_th).sqrt();
    let a0 = a0_frac * a_sat;
    let pr = problem.with_dprime(d_star);
    let start = mode_guess(&pr, uniform, &det.eigenvector, a0);
    let row = amplitude_row(&pr);
    let steps = (t_end / dt).ceil() as usize;
    let mut st = Stepper::new(pr.clone(), SolverOptions { dt, scheme: TimeScheme::Theta(0.5), ..SolverOptions::default() })?;
    let mut trace = vec![(0.0, dot(&row, &start.z))];
    st.run(&start, steps, |f| trace.push((f.time, dot(&row, &f.z))))?;
    // the first few steps carry the fast transients of the kick
    let skip = trace.len() / 20;
    let pde = fit_logistic(&trace[skip..])?;
    let ode_trace = integrate_amplitude_ode(r_th, c_th, trace[skip].1, dt, steps - skip);
    let ode = fit_logistic(&ode_trace)?;
    Ok(SaturationComparison {
        d_prime_star: d_star,
        d_prime_hat: det.d_prime_hat,
        saturation_rel_error: (pde.saturation - ode.saturation) / ode.saturation,
        rate_rel_error: (pde.r - ode.r) / ode.r,
        pde,
        ode,
        pde_trace: trace,
        ode_trace,
    })
}
