use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use qswna::continuation::{
    continue_branch, detect_bifurcation, fit_b, sample_window, sector_leading, switch_branch, window_offsets, BranchLabel, StepPolicy,
};
use qswna::dispersion::{build_cubic, critical_dprime, growth_spectrum};
use qswna::pde::{newton_steady, GridSpec, Problem, SolverOptions, Stepper, TimeScheme};
use qswna::series::{default_l_max, SeriesKind};
use qswna::stokes::{
    estimate_singulant, generate_late_terms_multi, optimal_truncation, remainder_scaling, stokes_smoothing_profile, theta_grid, HModel,
    LateTermOptions, Offset, Precision, Seed, StokesContext,
};
use qswna::sweep::{
    relax, run_epsilon_scaling, run_phase_diagram, seeded_perturbation, ContinuationJob, PhaseJob, SweepAxis, SweepPlan,
};
use qswna::wna::{analyse, build_tables, mu_crossings, WnaOptions};
use qswna::{Error, ModelParams};
use serde::Serialize;
use serde_json::{json, Value};

use crate::plot::{Heatmap, LinePlot, Mark, Series};
use crate::report::Artifacts;

pub struct Ctx {
    pub params: ModelParams,
    pub seed: u64,
    pub threads: usize,
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct GridArgs {
    /// cells in x
    #[arg(long, default_value_t = 24)]
    pub nx: usize,
    /// cells in u
    #[arg(long, default_value_t = 160)]
    pub nu: usize,
    /// x-diffusion stencil order (2 or 4)
    #[arg(long, default_value_t = 4)]
    pub x_order: usize,
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec> {
        if self.nx < 4 || self.nu < 8 {
            return Err(config_err("grid needs nx >= 4 and nu >= 8"));
        }
        if self.x_order != 2 && self.x_order != 4 {
            return Err(config_err("x-order must be 2 or 4"));
        }
        Ok(GridSpec { nx: self.nx, nu: self.nu, x_order: self.x_order, ..GridSpec::default() })
    }
}

fn d0_of(p: &ModelParams) -> Result<f64> {
    let st = p.steady()?;
    Ok(critical_dprime(p, &st, p.k1())?)
}

// ---------------------------------------------------------------- theory side

pub fn steady_state(ctx: &Ctx, out: &mut Artifacts) -> Result<Value> {
    let states = ctx.params.steady_states()?;
    let rows: Vec<Value> = states
        .iter()
        .map(|s| json!({ "c_star": s.c_star, "u_star": s.u_star, "N": s.n_prefactor, "branch_index": s.branch_index, "uniform_mode_stable": ctx.params.uniform_mode_stable(s) }))
        .collect();
    out.json("steady_state.json", &rows)?;
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(json!({}))
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct DispersionArgs {
    /// number of cos modes k = m pi / L, m = 0..modes
    #[arg(long, default_value_t = 8)]
    pub modes: usize,
    /// evaluate at this D'_* instead of the configured one
    #[arg(long, allow_hyphen_values = true)]
    pub d_prime: Option<f64>,
}

pub fn dispersion(ctx: &Ctx, a: &DispersionArgs, out: &mut Artifacts) -> Result<Value> {
    let p = match a.d_prime {
        Some(d) => ctx.params.with_dprime(d),
        None => ctx.params.clone(),
    };
    let st = p.steady()?;
    let ks: Vec<f64> = (0..=a.modes).map(|m| m as f64 * p.k1()).collect();
    let spec = growth_spectrum(&p, &st, &ks);
    #[derive(Serialize)]
    struct Row {
        mode: usize,
        k: f64,
        re0: f64,
        im0: f64,
        re1: f64,
        im1: f64,
        re2: f64,
        im2: f64,
        residual: f64,
    }
    let rows: Vec<Row> = spec
        .entries
        .iter()
        .enumerate()
        .map(|(m, e)| {
            let cub = build_cubic(&p, &st, e.k);
            let residual = e.roots.iter().map(|z| cub.eval(*z).norm()).fold(0.0, f64::max);
            Row { mode: m, k: e.k, re0: e.roots[0].re, im0: e.roots[0].im, re1: e.roots[1].re, im1: e.roots[1].im, re2: e.roots[2].re, im2: e.roots[2].im, residual }
        })
        .collect();
    out.csv("dispersion.csv", &rows)?;
    let plot = LinePlot {
        title: format!("growth rates, D'* = {}", p.motility.d_prime_star),
        x_label: "k".into(),
        y_label: "Re sigma".into(),
        series: (0..3)
            .map(|r| Series::new(&format!("root {r}"), spec.entries.iter().map(|e| (e.k, e.roots[r].re)).collect(), Mark::Line))
            .collect(),
    };
    out.line_plot("dispersion_plot", &plot)?;
    let summary = json!({ "d_prime_star": p.motility.d_prime_star, "max_real_part": spec.max_real_part, "critical_k": spec.critical_k });
    out.json("dispersion.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(serde_json::to_value(a)?)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct CriticalArgs {
    /// cos mode m, k = m pi / L
    #[arg(long, default_value_t = 1)]
    pub mode: u32,
}

pub fn critical(ctx: &Ctx, a: &CriticalArgs, out: &mut Artifacts) -> Result<Value> {
    if a.mode == 0 {
        return Err(config_err("mode must be at least 1"));
    }
    let p = &ctx.params;
    let st = p.steady()?;
    let k = a.mode as f64 * p.k1();
    let d0 = critical_dprime(p, &st, k)?;
    let c0 = build_cubic(&p.with_dprime(d0), &st, k).coeffs[3];
    let v = json!({ "mode": a.mode, "k": k, "d_prime_critical": d0, "constant_coefficient": c0 });
    out.json("critical.json", &v)?;
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(serde_json::to_value(a)?)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SeriesArgs {
    /// q, w, wtilde or s
    #[arg(long, default_value = "q")]
    pub kind: String,
    #[arg(long, default_value_t = 4)]
    pub j_max: usize,
    #[arg(long)]
    pub l_max: Option<usize>,
}

pub fn series(ctx: &Ctx, a: &SeriesArgs, out: &mut Artifacts) -> Result<Value> {
    let kind = SeriesKind::parse(&a.kind).ok_or_else(|| config_err(format!("unknown series kind {:?}", a.kind)))?;
    let p = &ctx.params;
    let st = p.steady()?;
    let rep = analyse(p)?;
    let l_max = a.l_max.unwrap_or(default_l_max(a.j_max));
    let opts = WnaOptions { j_max: a.j_max.max(4), l_max: l_max.max(24), ..WnaOptions::default() };
    let t = build_tables(p, &st, p.k1(), rep.d_prime_critical, rep.c22, &opts)?;
    let table = match kind {
        SeriesKind::Q => &t.q,
        SeriesKind::W => &t.w,
        SeriesKind::Wtilde => &t.wt,
        SeriesKind::S => &t.s,
    };
    #[derive(Serialize)]
    struct Row {
        j: usize,
        l: usize,
        value: f64,
    }
    let rows: Vec<Row> = (0..=a.j_max)
        .flat_map(|j| (0..table.row_len(j).min(l_max + 1)).map(move |l| (j, l)))
        .map(|(j, l)| Row { j, l, value: table.coeffs[j][l] })
        .collect();
    out.csv(&format!("series_{}.csv", a.kind.to_ascii_lowercase()), &rows)?;
    println!("{} coefficients of {:?} written", rows.len(), kind);
    Ok(serde_json::to_value(a)?)
}

pub fn wna(ctx: &Ctx, out: &mut Artifacts) -> Result<Value> {
    let rep = analyse(&ctx.params)?;
    out.json("wna.json", &rep)?;
    println!("D'_0 = {:.6}  mu = {:.6}  b = {:.6}  ({:?})", rep.d_prime_critical, rep.mu, rep.b, rep.criticality);
    Ok(json!({}))
}

pub fn report(ctx: &Ctx, out: &mut Artifacts) -> Result<Value> {
    let p = &ctx.params;
    let st = p.steady()?;
    let rep = analyse(p)?;
    let rho_grid: Vec<f64> = (1..=18).map(|k| 0.05 * k as f64).collect();
    let curve: Vec<(f64, f64)> = rho_grid
        .iter()
        .filter_map(|&r| {
            let q = p.with_rho(r);
            d0_of(&q).ok().map(|d| (r, d))
        })
        .collect();
    let mus: Vec<(f64, f64)> = rho_grid.iter().filter_map(|&r| analyse(&p.with_rho(r)).ok().map(|x| (r, x.mu))).collect();
    let crossings = mu_crossings(p, &rho_grid);
    out.line_plot(
        "critical_curve",
        &LinePlot { title: "critical D'_* against rho*".into(), x_label: "rho*".into(), y_label: "D'_0".into(), series: vec![Series::new("D'_0", curve, Mark::Line)] },
    )?;
    out.line_plot("mu_curve", &LinePlot { title: "cubic coefficient mu against rho*".into(), x_label: "rho*".into(), y_label: "mu".into(), series: vec![Series::new("mu", mus, Mark::Line)] })?;
    let summary = json!({
        "steady_state": st,
        "wna": rep,
        "mu_crossings": crossings,
    });
    out.json("report.json", &summary)?;
    println!("D'_0 = {:.6}, mu = {:.6}, b = {:.6}, mu = 0 at rho* = {:?}", rep.d_prime_critical, rep.mu, rep.b, crossings);
    Ok(json!({}))
}

// ---------------------------------------------------------------- PDE side

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
pub enum SchemeArg {
    ImplicitEuler,
    CrankNicolson,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub d_prime: Option<f64>,
    #[arg(long, default_value_t = 200.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dt: f64,
    /// relative amplitude of the initial perturbation of n
    #[arg(long, default_value_t = 0.01)]
    pub amp: f64,
    #[arg(long, value_enum, default_value = "implicit-euler")]
    pub scheme: SchemeArg,
    /// record every this many steps
    #[arg(long, default_value_t = 1)]
    pub every: usize,
}

fn rho_profile(pr: &Problem, f: &qswna::pde::Field) -> Vec<(f64, f64)> {
    let ob = pr.observables(f);
    pr.grid.x.iter().copied().zip(ob.rho).collect()
}

pub fn simulate(ctx: &Ctx, a: &SimulateArgs, out: &mut Artifacts) -> Result<Value> {
    if !(a.dt > 0.0 && a.t_end > 0.0) || a.every == 0 {
        return Err(config_err("dt, t-end and every must be positive"));
    }
    let p = ctx.params.with_dprime(a.d_prime.unwrap_or(ctx.params.motility.d_prime_star));
    let pr = Problem::new(&p, &a.grid.spec()?)?;
    let uni = pr.uniform_state()?;
    let start = seeded_perturbation(&pr, &uni, a.amp, ctx.seed);
    let scheme = match a.scheme {
        SchemeArg::ImplicitEuler => TimeScheme::ImplicitEuler,
        SchemeArg::CrankNicolson => TimeScheme::Theta(0.5),
    };
    let mut st = Stepper::new(pr.clone(), SolverOptions { dt: a.dt, scheme, ..SolverOptions::default() })?;
    let m0 = pr.mass(&start);
    #[derive(Serialize)]
    struct Row {
        t: f64,
        mode1: f64,
        delta_rho: f64,
        mass_drift: f64,
        min_n: f64,
    }
    let sample = |f: &qswna::pde::Field| {
        let ob = pr.observables(f);
        Row { t: f.time, mode1: ob.mode1, delta_rho: ob.delta_rho, mass_drift: (pr.mass(f) - m0) / m0, min_n: f.min_n() }
    };
    let mut rows = vec![sample(&start)];
    let steps = (a.t_end / a.dt).round() as usize;
    let mut k = 0;
    let end = st.run(&start, steps, |f| {
        k += 1;
        if k % a.every == 0 || k == steps {
            rows.push(sample(f));
        }
    })?;
    out.csv("simulate_trace.csv", &rows)?;
    out.line_plot(
        "simulate_mode",
        &LinePlot { title: "cos-mode amplitude of rho".into(), x_label: "t".into(), y_label: "a(t)".into(), series: vec![Series::new("PDE", rows.iter().map(|r| (r.t, r.mode1)).collect(), Mark::Line)] },
    )?;
    out.line_plot(
        "simulate_rho",
        &LinePlot { title: "final rho(x)".into(), x_label: "x".into(), y_label: "rho".into(), series: vec![Series::new("rho", rho_profile(&pr, &end), Mark::Line)] },
    )?;
    let last = rows.last().map(|r| (r.delta_rho, r.mass_drift)).unwrap_or_default();
    let max_drift = rows.iter().map(|r| r.mass_drift.abs()).fold(0.0, f64::max);
    let v = json!({ "d_prime_star": p.motility.d_prime_star, "steps": st.stats.steps, "factorizations": st.stats.factorizations, "final_delta_rho": last.0, "max_mass_drift": max_drift });
    out.json("simulate.json", &v)?;
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(serde_json::to_value(a)?)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SteadyArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub d_prime: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub amp: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    #[arg(long, default_value_t = 2000.0)]
    pub t_max: f64,
}

pub fn steady(ctx: &Ctx, a: &SteadyArgs, out: &mut Artifacts) -> Result<Value> {
    let p = ctx.params.with_dprime(a.d_prime.unwrap_or(ctx.params.motility.d_prime_star));
    let pr = Problem::new(&p, &a.grid.spec()?)?;
    let uni = pr.uniform_state()?;
    let start = seeded_perturbation(&pr, &uni, a.amp, ctx.seed);
    let (relaxed, settled) = relax(&pr, &start, a.dt, a.t_max, 1e-6)?;
    let polished = newton_steady(&pr, &relaxed, &SolverOptions::default())?;
    let f = polished.field;
    let g = &pr.grid;
    out.line_plot("steady_rho", &LinePlot { title: "steady rho(x)".into(), x_label: "x".into(), y_label: "rho".into(), series: vec![Series::new("rho", rho_profile(&pr, &f), Mark::Line)] })?;
    let values = (0..g.nu).flat_map(|j| (0..g.nx).map(move |i| (i, j))).map(|(i, j)| Some(f.n(i, j))).collect();
    out.heatmap("steady_density", &Heatmap { title: "n(x, u)".into(), x_label: "x".into(), y_label: "u".into(), xs: g.x.clone(), ys: g.u.clone(), values, overlays: vec![] })?;
    let ob = pr.observables(&f);
    let v = json!({ "d_prime_star": p.motility.d_prime_star, "relaxation_settled": settled, "relaxation_time": relaxed.time, "newton_iterations": polished.iterations, "residual": polished.residual, "delta_rho": ob.delta_rho, "order_parameter": ob.delta_rho / p.rho_star, "mass": ob.mass });
    out.json("steady.json", &v)?;
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(serde_json::to_value(a)?)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct ContinueArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// branch range as multiples of D'_0: [lo, hi] * D'_0
    #[arg(long, default_value_t = 1.4)]
    pub range_lo: f64,
    #[arg(long, default_value_t = 0.8)]
    pub range_hi: f64,
    #[arg(long, default_value_t = 60)]
    pub max_points: usize,
    /// pinned amplitude used to step off the pitchfork
    #[arg(long, default_value_t = 0.005)]
    pub amp: f64,
    /// also sample the small-amplitude window and fit b
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub fit: bool,
}

pub fn continuation(ctx: &Ctx, a: &ContinueArgs, out: &mut Artifacts) -> Result<Value> {
    let p = &ctx.params;
    let rep = analyse(p)?;
    let d0 = rep.d_prime_critical;
    let pr = Problem::new(p, &a.grid.spec()?)?;
    let uni = pr.uniform_state()?;
    let det = detect_bifurcation(&pr, &uni, (1.3 * d0, 0.7 * d0), 12)?;
    let opts = SolverOptions::default();
    let range = (a.range_lo * d0, a.range_hi * d0);
    let direction = -rep.mu.signum();
    let policy = StepPolicy { max_points: a.max_points, ..StepPolicy::default() };
    let branches: Vec<qswna::continuation::Branch> = qswna::exec::with_threads(ctx.threads, || {
        qswna::exec::map(&[(1.0, BranchLabel::Plus), (-1.0, BranchLabel::Minus)], |&(sign, label)| {
            let (f, d) = switch_branch(&pr, &uni, &det, sign, a.amp * p.rho_star, &opts)?;
            continue_branch(&pr.with_dprime(d), &f, label, range, direction, &policy, &opts)
        })
    })
    .into_iter()
    .collect::<qswna::Result<_>>()?;
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let uniform_d: Vec<f64> = (0..=40).map(|k| lo + (hi - lo) * k as f64 / 40.0).collect();
    let uniform_sigma = qswna::exec::map(&uniform_d, |&d| sector_leading(&pr.with_dprime(d), &uni, 1));
    #[derive(Serialize)]
    struct Row {
        branch: BranchLabel,
        d_prime_star: f64,
        delta_rho: f64,
        amplitude: f64,
        stable: Option<bool>,
    }
    let mut rows: Vec<Row> = uniform_d
        .iter()
        .zip(&uniform_sigma)
        .map(|(&d, &s)| Row { branch: BranchLabel::Uniform, d_prime_star: d, delta_rho: 0.0, amplitude: 0.0, stable: Some(s < 0.0) })
        .collect();
    for b in &branches {
        rows.extend(b.points.iter().map(|q| Row { branch: b.label, d_prime_star: q.d_prime_star, delta_rho: q.delta_rho, amplitude: q.amplitude, stable: q.stable }));
    }
    out.csv("branches.csv", &rows)?;
    let theory: Vec<(f64, f64)> = uniform_d.iter().filter_map(|&d| rep.branch_prediction(d).ok().map(|bp| (d, bp.delta_rho() / 2.0))).collect();
    let mut series = vec![
        Series::new("uniform stable", uniform_d.iter().zip(&uniform_sigma).filter(|(_, s)| **s < 0.0).map(|(d, _)| (*d, 0.0)).collect(), Mark::Dots),
        Series::new("uniform unstable", uniform_d.iter().zip(&uniform_sigma).filter(|(_, s)| **s >= 0.0).map(|(d, _)| (*d, 0.0)).collect(), Mark::Dots),
    ];
    for b in &branches {
        series.push(Series::new(&format!("{:?}", b.label).to_lowercase(), b.points.iter().map(|q| (q.d_prime_star, q.amplitude)).collect(), Mark::Line));
    }
    series.push(Series::new("theory +", theory.clone(), Mark::Dashed));
    series.push(Series::new("theory -", theory.iter().map(|&(d, v)| (d, -v)).collect(), Mark::Dashed));
    out.line_plot("bifurcation", &LinePlot { title: "bifurcation diagram".into(), x_label: "D'_*".into(), y_label: "cos-mode amplitude of rho".into(), series })?;
    let fit = if a.fit {
        let offs = window_offsets(d0, 1e-4, 1e-2, 10);
        let pts = sample_window(&pr, &uni, &det, 1.0, &offs, rep.b, &opts)?;
        Some(fit_b(&pts, det.d_prime_hat, p.rho_star, f64::INFINITY)?)
    } else {
        None
    };
    let v = json!({
        "d_prime_critical": d0,
        "d_prime_hat": det.d_prime_hat,
        "d_rel_error": (det.d_prime_hat - d0) / d0.abs(),
        "mu": rep.mu,
        "criticality": rep.criticality,
        "b_theory": rep.b,
        "pitchfork_fit": fit,
        "b_rel_error": fit.as_ref().map(|f| (f.b_hat - rep.b) / rep.b),
        "branches": branches.iter().map(|b| json!({ "label": b.label, "status": b.status, "points": b.points.len(), "folds": b.folds })).collect::<Vec<_>>(),
        "detection_scan": det.scan,
    });
    out.json("continuation.json", &v)?;
    println!("D_hat = {:.6} (theory {:.6}), b_hat = {:?} (theory {:.6})", det.d_prime_hat, d0, fit.map(|f| f.b_hat), rep.b);
    Ok(serde_json::to_value(a)?)
}

// ---------------------------------------------------------------- sweeps

#[derive(Args, Clone, Debug, Serialize)]
pub struct EpsilonSweepArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.02,0.01,0.005,0.0025")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub window_points: usize,
}

pub fn epsilon_sweep(ctx: &Ctx, a: &EpsilonSweepArgs, out: &mut Artifacts) -> Result<Value> {
    let plan = SweepPlan::new(SweepAxis::Epsilon, a.eps.clone(), ctx.threads)?;
    let job = ContinuationJob { grid: a.grid.spec()?, window_points: a.window_points, ..ContinuationJob::default() };
    let res = run_epsilon_scaling(&ctx.params, &plan, &job)?;
    #[derive(Serialize)]
    struct Row {
        epsilon: f64,
        d_prime_hat: Option<f64>,
        d_rel_error: Option<f64>,
        b_hat: Option<f64>,
        b_rel_error: Option<f64>,
        exponent: Option<f64>,
        failure: Option<String>,
    }
    let rows: Vec<Row> = res
        .points
        .iter()
        .map(|q| Row { epsilon: q.epsilon, d_prime_hat: q.d_prime_hat, d_rel_error: q.d_rel_error, b_hat: q.b_hat, b_rel_error: q.b_rel_error, exponent: q.exponent, failure: q.failure.clone() })
        .collect();
    out.csv("epsilon_sweep.csv", &rows)?;
    let mut series = Vec::new();
    for (name, get, fit) in [
        ("D' error", (|q: &Row| q.d_rel_error) as fn(&Row) -> Option<f64>, res.d_fit),
        ("b error", |q: &Row| q.b_rel_error, res.b_fit),
    ] {
        series.push(Series::new(name, rows.iter().filter_map(|q| get(q).map(|v| (q.epsilon, v))).collect(), Mark::Dots));
        if let Some(f) = fit {
            let emax = a.eps.iter().copied().fold(0.0, f64::max);
            series.push(Series::new(&format!("{name} fit"), vec![(0.0, 0.0), (emax, f.slope * emax)], Mark::Dashed));
        }
    }
    out.line_plot("epsilon_sweep_plot", &LinePlot { title: "relative error against epsilon".into(), x_label: "epsilon".into(), y_label: "relative error".into(), series })?;
    let v = json!({
        "d_prime_theory": res.d_prime_theory,
        "b_theory": res.b_theory,
        "d_fit": res.d_fit,
        "b_fit": res.b_fit,
        "d_monotone": res.d_monotone,
        "b_monotone": res.b_monotone,
        "points": res.points,
    });
    out.json("epsilon_sweep.json", &v)?;
    for r in &rows {
        println!("eps {:<8} D' err {:>12} b err {:>12} {}", r.epsilon, fmt_opt(r.d_rel_error), fmt_opt(r.b_rel_error), r.failure.as_deref().unwrap_or(""));
    }
    if let (Some(d), Some(b)) = (res.d_fit, res.b_fit) {
        println!("through-origin fits: D' slope {:.4} R2 {:.5}; b slope {:.4} R2 {:.5}", d.slope, d.r_squared, b.slope, b.r_squared);
    }
    Ok(serde_json::to_value(a)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:+.5e}"))
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct PhaseArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.3,0.4,0.5,0.65,0.8")]
    pub rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1.0,-1.2,-1.4,-1.6,-2.0,-2.5")]
    pub d_prime: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub amp: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub t_max: f64,
}

pub fn phase_diagram(ctx: &Ctx, a: &PhaseArgs, out: &mut Artifacts) -> Result<Value> {
    let rp = SweepPlan::new(SweepAxis::RhoStar, a.rho.clone(), ctx.threads)?;
    let dp = SweepPlan::new(SweepAxis::DPrimeStar, a.d_prime.clone(), ctx.threads)?;
    let job = PhaseJob { grid: a.grid.spec()?, dt: a.dt, t_max: a.t_max, seed_amplitude: a.amp, seed: ctx.seed, ..PhaseJob::default() };
    let pd = run_phase_diagram(&ctx.params, &rp, &dp, &job)?;
    // rows are D'_*, columns rho*
    let (nr, nd) = (pd.rho_values.len(), pd.d_prime_values.len());
    let values = (0..nd).flat_map(|id| (0..nr).map(move |ir| (ir, id))).map(|(ir, id)| pd.points[ir * nd + id].order_parameter).collect();
    let mut overlays = vec![Series::new("D'_0(rho*)", pd.critical_curve.clone(), Mark::Line)];
    if let Some(&c) = pd.mu_crossings.first() {
        let (lo, hi) = (pd.d_prime_values[0], pd.d_prime_values[nd - 1]);
        overlays.push(Series::new("mu = 0", vec![(c, lo), (c, hi)], Mark::Dashed));
    }
    out.heatmap(
        "phase_diagram",
        &Heatmap { title: "order parameter delta rho / rho*".into(), x_label: "rho*".into(), y_label: "D'_*".into(), xs: pd.rho_values.clone(), ys: pd.d_prime_values.clone(), values, overlays },
    )?;
    out.csv("phase_points.csv", &pd.points)?;
    out.json("phase_diagram.json", &json!({ "critical_curve": pd.critical_curve, "mu_crossings": pd.mu_crossings, "failures": pd.points.iter().filter(|p| p.failure.is_some()).count() }))?;
    println!("{} points, mu = 0 at rho* = {:?}", pd.points.len(), pd.mu_crossings);
    Ok(serde_json::to_value(a)?)
}

// ---------------------------------------------------------------- late terms

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
pub enum Study {
    LateTerms,
    Truncation,
    Smoothing,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
pub enum SeedArg {
    Singular,
    Smooth,
    Homogeneous,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct StokesArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    /// |u - u*| of the evaluation points
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub r: Vec<f64>,
    /// arg(u - u*) for late terms
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub theta: f64,
    #[arg(long, value_enum, default_value = "singular")]
    pub seed_kind: SeedArg,
    #[arg(long, default_value_t = 60)]
    pub j_max: usize,
    #[arg(long, default_value_t = 256)]
    pub bits: usize,
    /// epsilons for truncation, or the single epsilon for smoothing
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// theta half-width around pi/2 for smoothing
    #[arg(long, default_value_t = 0.25)]
    pub half_width: f64,
    #[arg(long, default_value_t = 41)]
    pub points: usize,
}

pub fn stokes(ctx: &Ctx, a: &StokesArgs, out: &mut Artifacts) -> Result<Value> {
    let p = &ctx.params;
    let st = p.steady()?;
    let rep = analyse(p)?;
    let sc = StokesContext::from_params(p, &st, p.k1(), rep.d_prime_critical, HModel::Full);
    if a.r.is_empty() || a.r.iter().any(|r| !(*r > 0.0)) {
        return Err(config_err("r must be positive"));
    }
    if a.j_max < 12 {
        bail!(config_err("j-max must be at least 12"));
    }
    let prec = Precision::Extended { bits: a.bits.max(64) };
    match a.study {
        Study::LateTerms => {
            let seed = match a.seed_kind {
                SeedArg::Singular => Seed::singular(),
                SeedArg::Smooth => Seed::Smooth,
                SeedArg::Homogeneous => Seed::Homogeneous,
            };
            let offsets: Vec<Offset> = a.r.iter().map(|&r| Offset { r, theta: a.theta }).collect();
            let studies = generate_late_terms_multi(&sc, &offsets, seed, &LateTermOptions { j_max: a.j_max, window: 40, precision: prec })?;
            #[derive(Serialize)]
            struct Row {
                r: f64,
                theta: f64,
                j: usize,
                log_abs: f64,
                arg: f64,
                normalized_ratio: Option<f64>,
            }
            let mut rows = Vec::new();
            let mut fits = Vec::new();
            let mut series = Vec::new();
            for s in &studies {
                for t in &s.terms {
                    let nr = (t.j + 1 < s.terms.len()).then(|| s.normalized_ratio(t.j));
                    rows.push(Row { r: s.offset.r, theta: s.offset.theta, j: t.j, log_abs: t.log_abs, arg: t.arg, normalized_ratio: nr });
                }
                series.push(Series::new(&format!("r = {}", s.offset.r), (1..s.terms.len() - 1).map(|j| (j as f64, s.normalized_ratio(j))).collect(), Mark::Line));
                fits.push(json!({ "r": s.offset.r, "theta": s.offset.theta, "fit": estimate_singulant(s, a.j_max, 10).map_err(|e| e.to_string()) }));
            }
            out.csv("late_terms.csv", &rows)?;
            out.line_plot("late_terms_ratio", &LinePlot { title: "normalised ratio of successive terms".into(), x_label: "j".into(), y_label: "ratio / prediction".into(), series })?;
            let v = json!({ "h0": sc.h0(), "gamma_exact": sc.gamma_exact(), "fits": fits });
            out.json("late_terms.json", &v)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Study::Truncation => {
            let eps = a.eps.clone().unwrap_or_else(|| vec![8e-3, 4e-3, 2e-3]);
            let r = a.r[0];
            let profs: Vec<_> = eps.iter().map(|&e| optimal_truncation(&sc, Offset { r, theta: a.theta }, e, 0, prec)).collect::<qswna::Result<_>>()?;
            #[derive(Serialize)]
            struct Row {
                epsilon: f64,
                j: usize,
                log_term: f64,
            }
            let rows: Vec<Row> = profs.iter().flat_map(|t| t.log_terms.iter().enumerate().map(move |(j, &l)| Row { epsilon: t.epsilon, j, log_term: l })).collect();
            out.csv("truncation_terms.csv", &rows)?;
            let series = profs.iter().map(|t| Series::new(&format!("eps = {}", t.epsilon), t.log_terms.iter().enumerate().map(|(j, &l)| (j as f64, l)).collect(), Mark::Line)).collect();
            out.line_plot("truncation_terms", &LinePlot { title: "ln |eps^j q_j|".into(), x_label: "j".into(), y_label: "ln |term|".into(), series })?;
            let rem_eps: Vec<f64> = if eps.len() >= 2 { eps.clone() } else { vec![1e-2, 5e-3, 2.5e-3, 1.25e-3] };
            let rs = remainder_scaling(sc.h0(), p.lambda, r, &rem_eps, 0, a.bits)?;
            out.line_plot(
                "remainder_scaling",
                &LinePlot {
                    title: "optimally truncated remainder".into(),
                    x_label: "lambda r^2 / (2 eps)".into(),
                    y_label: "ln |R_N|".into(),
                    series: vec![Series::new("remainder", rs.points.iter().map(|q| (q.x, q.log_remainder)).collect(), Mark::Dots)],
                },
            )?;
            let v = json!({
                "truncation": profs.iter().map(|t| json!({ "epsilon": t.epsilon, "n_opt": t.n_opt, "n_min": t.n_min, "near_minimal": t.near_minimal })).collect::<Vec<_>>(),
                "remainder_slope": rs.slope,
                "remainder_slope_rel_error": rs.slope_rel_error,
            });
            out.json("truncation.json", &v)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Study::Smoothing => {
            let eps = a.eps.as_ref().and_then(|e| e.first().copied()).unwrap_or(1e-3);
            let r = a.r[0];
            let sp = stokes_smoothing_profile(sc.h0(), p.lambda, r, eps, &theta_grid(a.half_width, a.points), 0, a.bits)?;
            let pred = sp.predicted();
            #[derive(Serialize)]
            struct Row {
                theta: f64,
                measured_re: f64,
                measured_im: f64,
                normalised: f64,
                predicted: f64,
            }
            let rows: Vec<Row> = (0..sp.theta.len())
                .map(|k| {
                    let z = sp.measured[k] / sp.prefactor;
                    Row { theta: sp.theta[k], measured_re: sp.measured[k].re, measured_im: sp.measured[k].im, normalised: z.re, predicted: pred[k].re }
                })
                .collect();
            out.csv("smoothing.csv", &rows)?;
            out.line_plot(
                "smoothing_profile",
                &LinePlot {
                    title: "switched-on component across the Stokes line".into(),
                    x_label: "theta".into(),
                    y_label: "switching function".into(),
                    series: vec![
                        Series::new("measured", rows.iter().map(|r| (r.theta, r.normalised)).collect(), Mark::Dots),
                        Series::new("S - erf", rows.iter().map(|r| (r.theta, r.predicted)).collect(), Mark::Line),
                    ],
                },
            )?;
            let v = json!({ "epsilon": eps, "r": r, "n_opt": sp.n_opt, "correlation": sp.correlation, "stokes_constant": sp.stokes_constant, "scale_predicted": sp.scale_predicted, "scale_fitted": sp.scale_fitted });
            out.json("smoothing.json", &v)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
    }
    Ok(serde_json::to_value(a)?)
}
