//! Late terms of the q-expansion, their singulant, optimal truncation and the error-function
//! smoothing of the switched-on exponential across the Stokes line.
//!
//! Terms are generated exactly as finite log-Laurent expansions about u*,
//! q_j = s^alpha sum_k (ln s)^k sum_n b_{jkn} s^n with s = u - u*, where alpha = -h0 for the
//! singular (homogeneous) seed and 0 for the smooth particular seed. Each level solves
//! lambda s q_j' + lambda h(u) q_j = q_{j-1}'' coefficient by coefficient, keeping a fixed
//! window of powers above the leading one.

use num_complex::Complex64;
use serde::Serialize;
use statrs::function::erf::erf;
use std::f64::consts::{FRAC_PI_2, LN_2};

use crate::error::{Error, Result};
use crate::exec;
use crate::mp::{gamma, Cx, Mp, Real};
use crate::params::{ModelParams, SteadyState};
use crate::series::SeriesContext;

const H_TAYLOR_LEN: usize = 1024;

/// How much of h(u) = D(u) k^2 / lambda the recursion sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum HModel {
    /// h frozen at h0 = h(u*): closed-form terms, exact Kummer solution available.
    Frozen,
    /// Full Taylor series of the tanh motility about u*.
    Full,
}

#[derive(Clone, Debug, Serialize)]
pub struct StokesContext {
    pub lambda: f64,
    pub u_star: f64,
    /// Taylor coefficients of h about u*; h[0] = h0.
    pub h: Vec<f64>,
    /// Right-hand side of the q0 equation per unit s.
    pub forcing: f64,
    pub model: HModel,
}

impl StokesContext {
    pub fn from_params(params: &ModelParams, steady: &SteadyState, k: f64, d_prime: f64, model: HModel) -> Self {
        let len = match model {
            HModel::Frozen => 1,
            HModel::Full => H_TAYLOR_LEN,
        };
        let sc = SeriesContext::new(params, steady, k, d_prime, len - 1);
        let scale = k * k / params.lambda;
        StokesContext {
            lambda: params.lambda,
            u_star: steady.u_star,
            h: sc.d.iter().take(len).map(|d| d * scale).collect(),
            forcing: sc.s_const() * sc.rho * sc.g1,
            model,
        }
    }

    /// Pure frozen model with unit forcing.
    pub fn frozen(h0: f64, lambda: f64) -> Self {
        StokesContext { lambda, u_star: 0.0, h: vec![h0], forcing: 1.0, model: HModel::Frozen }
    }

    pub fn h0(&self) -> f64 {
        self.h[0]
    }

    pub fn gamma_exact(&self) -> f64 {
        self.h0() - 1.5
    }
}

/// Polar offset u - u* = r e^{i theta}, theta in (-pi, pi].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Offset {
    pub r: f64,
    pub theta: f64,
}

impl Offset {
    pub fn real(s: f64) -> Self {
        if s < 0.0 {
            Offset { r: -s, theta: std::f64::consts::PI }
        } else {
            Offset { r: s, theta: 0.0 }
        }
    }

    pub fn s(&self) -> Complex64 {
        Complex64::from_polar(self.r, self.theta)
    }

    /// -(u - u*)^2 / 2
    pub fn singulant(&self) -> Complex64 {
        -self.s() * self.s() / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Seed {
    /// Smooth particular solution only.
    Smooth,
    /// The homogeneous solution q_h alone.
    Homogeneous,
    /// Smooth solution plus `strength` times the homogeneous solution, switched in at level `onset`.
    SingularPole { strength: f64, onset: usize },
}

impl Seed {
    pub fn singular() -> Self {
        Seed::SingularPole { strength: 1.0, onset: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Precision {
    Double,
    Extended { bits: usize },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LateTermOptions {
    pub j_max: usize,
    /// Powers of s kept above the leading one at every level.
    pub window: usize,
    pub precision: Precision,
}

impl Default for LateTermOptions {
    fn default() -> Self {
        LateTermOptions { j_max: 60, window: 60, precision: Precision::Extended { bits: 256 } }
    }
}

/// q_j(u) as ln|q_j| and arg q_j, which never overflow.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TermValue {
    pub j: usize,
    pub log_abs: f64,
    pub arg: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LateTermStudy {
    pub offset: Offset,
    pub h0: f64,
    pub lambda: f64,
    pub seed: Seed,
    pub terms: Vec<TermValue>,
}

impl LateTermStudy {
    /// q_{j+1}(u) / q_j(u)
    pub fn ratio(&self, j: usize) -> Complex64 {
        let (a, b) = (&self.terms[j], &self.terms[j + 1]);
        Complex64::from_polar((b.log_abs - a.log_abs).exp(), b.arg - a.arg)
    }

    pub fn ratios(&self) -> Vec<Complex64> {
        (0..self.terms.len().saturating_sub(1)).map(|j| self.ratio(j)).collect()
    }

    /// |q_{j+1}/q_j| * |lambda v| / |j + gamma + 1|, which tends to 1 for singular seeds.
    pub fn normalized_ratio(&self, j: usize) -> f64 {
        let lv = self.lambda * self.offset.singulant();
        let g = self.h0 - 1.5;
        (self.ratio(j) * lv / (j as f64 + g + 1.0)).norm()
    }
}

#[derive(Clone, Debug)]
struct LogLaurent<T> {
    /// alpha = -h0 when true, else 0
    singular: bool,
    nlo: i64,
    /// c[k][i] multiplies (ln s)^k s^(alpha + nlo + i)
    c: Vec<Vec<T>>,
}

impl<T: Real> LogLaurent<T> {
    fn width(&self) -> usize {
        self.c.first().map_or(0, |r| r.len())
    }

    fn trim(&mut self) {
        while self.c.len() > 1 && self.c.last().is_some_and(|r| r.iter().all(|x| x.is_zero())) {
            self.c.pop();
        }
    }

    fn second_derivative(&self, h0: &T) -> Self {
        let zero = h0.lift(0.0);
        let kk = self.c.len();
        let w = self.width();
        let mut out = vec![vec![zero.clone(); w]; kk];
        for i in 0..w {
            let n = self.nlo + i as i64;
            let p = if self.singular { h0.lift(n as f64).minus(h0) } else { h0.lift(n as f64) };
            let pp = p.times(&p.minus(&h0.lift(1.0)));
            let p2 = p.scaled(2.0).minus(&h0.lift(1.0));
            for k in 0..kk {
                let mut v = pp.times(&self.c[k][i]);
                if k + 1 < kk {
                    v = v.plus(&p2.times(&self.c[k + 1][i]).scaled((k + 1) as f64));
                }
                if k + 2 < kk {
                    v = v.plus(&self.c[k + 2][i].scaled(((k + 2) * (k + 1)) as f64));
                }
                out[k][i] = v;
            }
        }
        LogLaurent { singular: self.singular, nlo: self.nlo - 2, c: out }
    }

    /// Solves lambda s q' + lambda h q = rhs on the same support; `free` fixes the
    /// homogeneous coefficient at n = 0 of a singular expansion.
    fn solve(rhs: &Self, h: &[T], lambda: &T, free: &T) -> Self {
        let zero = lambda.lift(0.0);
        let w = rhs.width();
        let has_resonance = rhs.singular && rhs.nlo <= 0 && rhs.nlo + w as i64 > 0;
        let kk = rhs.c.len() + usize::from(has_resonance);
        let mut b = vec![vec![zero.clone(); w]; kk];
        for i in 0..w {
            let n = rhs.nlo + i as i64;
            let mlim = i.min(h.len() - 1);
            let conv = |b: &Vec<Vec<T>>, k: usize| {
                let mut acc = zero.clone();
                for m in 1..=mlim {
                    acc = acc.plus(&h[m].times(&b[k][i - m]));
                }
                acc
            };
            let rk = |k: usize| if k < rhs.c.len() { rhs.c[k][i].over(lambda) } else { zero.clone() };
            if rhs.singular && n == 0 {
                b[0][i] = free.clone();
                for k in 0..kk - 1 {
                    let v = rk(k).minus(&conv(&b, k));
                    b[k + 1][i] = v.scaled(1.0 / (k + 1) as f64);
                }
            } else {
                let beta = if rhs.singular { lambda.lift(n as f64) } else { lambda.lift(n as f64).plus(&h[0]) };
                for k in (0..kk).rev() {
                    let mut v = rk(k).minus(&conv(&b, k));
                    if k + 1 < kk {
                        v = v.minus(&b[k + 1][i].scaled((k + 1) as f64));
                    }
                    b[k][i] = v.over(&beta);
                }
            }
        }
        let mut out = LogLaurent { singular: rhs.singular, nlo: rhs.nlo, c: b };
        out.trim();
        out
    }

    fn eval(&self, off: &Offset, h0: &T) -> Cx<T> {
        let r = h0.lift(off.r);
        let th = h0.lift(off.theta);
        let lr = r.ln();
        let ls = Cx::new(lr.clone(), th.clone());
        let s = Cx::new(r.times(&th.cos()), r.times(&th.sin()));
        let mut acc = Cx::zero_like(h0);
        for row in self.c.iter().rev() {
            let mut poly = Cx::zero_like(h0);
            for c in row.iter().rev() {
                poly = poly.times(&s).plus(&Cx::real(c.clone()));
            }
            acc = acc.times(&ls).plus(&poly);
        }
        let alpha = if self.singular { h0.lift(self.nlo as f64).minus(h0) } else { h0.lift(self.nlo as f64) };
        let pre = Cx::new(lr.times(&alpha), th.times(&alpha)).exp();
        acc.times(&pre)
    }
}

fn seed_singular<T: Real>(h: &[T], lambda: &T, window: usize) -> LogLaurent<T> {
    let zero = lambda.lift(0.0);
    let rhs = LogLaurent { singular: true, nlo: 0, c: vec![vec![zero; window + 1]] };
    LogLaurent::solve(&rhs, h, lambda, &lambda.lift(1.0))
}

fn seed_smooth<T: Real>(h: &[T], lambda: &T, forcing: f64, width: usize) -> LogLaurent<T> {
    let zero = lambda.lift(0.0);
    let mut rhs = LogLaurent { singular: false, nlo: 0, c: vec![vec![zero.clone(); width.max(2)]] };
    rhs.c[0][1] = lambda.lift(forcing);
    LogLaurent::solve(&rhs, h, lambda, &zero)
}

fn levels<T: Real>(first: LogLaurent<T>, count: usize, h: &[T], lambda: &T) -> Vec<LogLaurent<T>> {
    let zero = lambda.lift(0.0);
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(first);
    while out.len() < count {
        let rhs = out.last().unwrap().second_derivative(&h[0]);
        out.push(LogLaurent::solve(&rhs, h, lambda, &zero));
    }
    out
}

fn generate_in<T: Real>(ctx: &StokesContext, offsets: &[Offset], seed: Seed, opts: &LateTermOptions, proto: &T) -> Result<Vec<Vec<Cx<T>>>> {
    let j_max = opts.j_max;
    let lambda = proto.lift(ctx.lambda);
    // smooth terms grow from the complex singularities of h, and their Taylor tails need
    // about 4j extra powers to converge at level j
    let smooth_width = match seed {
        Seed::Homogeneous => 0,
        _ => opts.window + 6 * j_max + 1,
    };
    let need = smooth_width.max(opts.window + 1);
    if ctx.model == HModel::Full && need > ctx.h.len() {
        return Err(Error::Precondition(format!("j_max = {j_max} needs {need} Taylor coefficients of h")));
    }
    let h: Vec<T> = ctx.h.iter().take(need).map(|x| proto.lift(*x)).collect();
    let smooth = if smooth_width > 0 { levels(seed_smooth(&h, &lambda, ctx.forcing, smooth_width), j_max + 1, &h, &lambda) } else { Vec::new() };
    let (sing, strength, onset) = match seed {
        Seed::Smooth => (Vec::new(), 0.0, 0),
        Seed::Homogeneous => (levels(seed_singular(&h, &lambda, opts.window), j_max + 1, &h, &lambda), 1.0, 0),
        Seed::SingularPole { strength, onset } => {
            let count = (j_max + 1).saturating_sub(onset);
            (levels(seed_singular(&h, &lambda, opts.window), count, &h, &lambda), strength, onset)
        }
    };
    let st = proto.lift(strength);
    let mut out = Vec::with_capacity(offsets.len());
    for off in offsets {
        let mut vals = Vec::with_capacity(j_max + 1);
        for j in 0..=j_max {
            let mut v = match smooth.get(j) {
                Some(q) => q.eval(off, &h[0]),
                None => Cx::zero_like(&h[0]),
            };
            if j >= onset && !sing.is_empty() {
                v = v.plus(&sing[j - onset].eval(off, &h[0]).times_real(&st));
            }
            if !v.is_finite() {
                return Err(Error::NeedsExtendedPrecision);
            }
            vals.push(v);
        }
        out.push(vals);
    }
    Ok(out)
}

fn to_terms<T: Real>(vals: &[Cx<T>]) -> Vec<TermValue> {
    vals.iter()
        .enumerate()
        .map(|(j, v)| {
            let (log_abs, arg) = v.log_polar();
            TermValue { j, log_abs, arg }
        })
        .collect()
}

/// Late terms q_0..q_{j_max} at several offsets from one coefficient recursion.
pub fn generate_late_terms_multi(ctx: &StokesContext, offsets: &[Offset], seed: Seed, opts: &LateTermOptions) -> Result<Vec<LateTermStudy>> {
    if offsets.iter().any(|o| !(o.r > 0.0)) {
        return Err(Error::Precondition("u must differ from u*".into()));
    }
    if ctx.h0() <= 0.0 {
        return Err(Error::InvalidParam("h0 must be positive".into()));
    }
    let terms: Vec<Vec<TermValue>> = match opts.precision {
        Precision::Double => {
            if opts.j_max > 30 {
                return Err(Error::NeedsExtendedPrecision);
            }
            generate_in(ctx, offsets, seed, opts, &0.0f64)?.iter().map(|v| to_terms(v)).collect()
        }
        Precision::Extended { bits } => {
            if bits < 64 {
                return Err(Error::InvalidParam("extended precision needs at least 64 bits".into()));
            }
            generate_in(ctx, offsets, seed, opts, &Mp::zero(bits))?.iter().map(|v| to_terms(v)).collect()
        }
    };
    Ok(offsets
        .iter()
        .zip(terms)
        .map(|(off, terms)| LateTermStudy { offset: *off, h0: ctx.h0(), lambda: ctx.lambda, seed, terms })
        .collect())
}

pub fn generate_late_terms(ctx: &StokesContext, offset: Offset, seed: Seed, opts: &LateTermOptions) -> Result<LateTermStudy> {
    Ok(generate_late_terms_multi(ctx, &[offset], seed, opts)?.remove(0))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SingulantFit {
    pub j_lo: usize,
    pub j_hi: usize,
    pub v_hat: Complex64,
    pub v_exact: Complex64,
    pub v_rel_error: f64,
    pub gamma_hat: f64,
    pub gamma_imag: f64,
    pub gamma_exact: f64,
    pub gamma_rel_error: f64,
}

/// Fits q_{j+1}/q_j = (j + gamma + 1)/(lambda v) over the ratios that use terms j_hi - len .. j_hi.
pub fn estimate_singulant(study: &LateTermStudy, j_hi: usize, len: usize) -> Result<SingulantFit> {
    if j_hi >= study.terms.len() || len < 2 || len > j_hi {
        return Err(Error::Precondition(format!("window ({len} ratios ending at {j_hi}) outside the sequence")));
    }
    let j_lo = j_hi - len;
    if study.terms[j_lo..=j_hi].iter().any(|t| !t.log_abs.is_finite()) {
        return Err(Error::NotDivergent);
    }
    let pts: Vec<(f64, Complex64)> = (j_lo..j_hi).map(|j| (j as f64, study.ratio(j))).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<Complex64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: Complex64 = pts.iter().map(|p| (p.1 - my) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let last = pts.last().unwrap().1;
    if !(slope.norm() * j_hi as f64 > 0.5 * last.norm()) {
        return Err(Error::NotDivergent);
    }
    let v_hat = 1.0 / (study.lambda * slope);
    let g = icpt / slope - 1.0;
    let v_exact = study.offset.singulant();
    let gamma_exact = study.h0 - 1.5;
    Ok(SingulantFit {
        j_lo,
        j_hi,
        v_hat,
        v_exact,
        v_rel_error: (v_hat - v_exact).norm() / v_exact.norm(),
        gamma_hat: g.re,
        gamma_imag: g.im,
        gamma_exact,
        gamma_rel_error: (g.re - gamma_exact).abs() / gamma_exact.abs(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TruncationProfile {
    pub epsilon: f64,
    pub r: f64,
    pub theta: f64,
    pub n0: i64,
    pub n_opt: usize,
    /// argmin_j |eps^j q_j|
    pub n_min: usize,
    /// ln |eps^j q_j|, j = 0..
    pub log_terms: Vec<f64>,
    pub log_min_term: f64,
    pub log_term_at_opt: f64,
    /// |eps^N q_N| within a factor 2 of the least term
    pub near_minimal: bool,
}

pub fn optimal_index(lambda: f64, r: f64, epsilon: f64, n0: i64) -> i64 {
    (lambda * r * r / (2.0 * epsilon)).round() as i64 + n0
}

/// Locates the least term of the singular-seed sequence and compares with N = lambda r^2/(2 eps) + N0.
pub fn optimal_truncation(ctx: &StokesContext, offset: Offset, epsilon: f64, n0: i64, precision: Precision) -> Result<TruncationProfile> {
    let n = optimal_index(ctx.lambda, offset.r, epsilon, n0);
    if n < 3 {
        return Err(Error::Precondition(format!("optimal index {n} < 3; epsilon too large")));
    }
    let n_opt = n as usize;
    let j_max = n_opt + (n_opt / 4).max(10);
    let opts = LateTermOptions { j_max, window: 40, precision };
    let study = generate_late_terms(ctx, offset, Seed::Homogeneous, &opts)?;
    let le = epsilon.ln();
    let log_terms: Vec<f64> = study.terms.iter().map(|t| t.log_abs + t.j as f64 * le).collect();
    let (n_min, log_min) = log_terms
        .iter()
        .enumerate()
        .skip(1)
        .fold((1, f64::INFINITY), |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc });
    let at = log_terms[n_opt];
    Ok(TruncationProfile {
        epsilon,
        r: offset.r,
        theta: offset.theta,
        n0,
        n_opt,
        n_min,
        log_min_term: log_min,
        log_term_at_opt: at,
        near_minimal: at <= log_min + LN_2,
        log_terms,
    })
}

/// Exact solution of the frozen problem eps q'' = lambda s q' + lambda h0 q whose expansion is
/// the singular late-term sequence, and its optimally truncated remainder.
struct Kummer {
    a: Mp,
    ap: Mp,
    c1: Mp,
    c2: Mp,
    bits: usize,
}

impl Kummer {
    fn new(h0: f64, bits: usize) -> Self {
        let a = Mp::from_f64(h0 / 2.0, bits);
        let half = Mp::from_f64(0.5, bits);
        let ap = a.plus(&half);
        let sp = Mp::pi(bits).sqrt();
        let c1 = sp.over(&gamma(&ap));
        let c2 = sp.scaled(-2.0).over(&gamma(&a));
        Kummer { a, ap, c1, c2, bits }
    }

    /// M(a, b, x) by its power series.
    fn m(&self, a: &Mp, b: &Mp, x: &Cx<Mp>) -> Cx<Mp> {
        let one = Mp::from_f64(1.0, self.bits);
        let mut term = Cx::real(one.clone());
        let mut sum = term.clone();
        let xabs = x.log_polar().0.exp();
        let tiny = -(self.bits as f64) * LN_2 - 10.0;
        let mut n = 0usize;
        loop {
            let nf = Mp::from_f64(n as f64, self.bits);
            let f = a.plus(&nf).over(&b.plus(&nf)).over(&nf.plus(&one));
            term = term.times(x).times_real(&f);
            sum = sum.plus(&term);
            n += 1;
            if n as f64 > xabs + 2.0 {
                let (lt, _) = term.log_polar();
                if lt < tiny {
                    break;
                }
            }
            if n > 100_000 {
                break;
            }
        }
        sum
    }

    /// x^a U(a, 1/2, x) - sum_{j<N} (a)_j (a+1/2)_j (-1/x)^j / j!, with sqrt(x) = sx continuous.
    fn remainder(&self, sx: &Cx<Mp>, ln_sx: &Cx<Mp>, n: usize) -> Cx<Mp> {
        let x = sx.times(sx);
        let half = Mp::from_f64(0.5, self.bits);
        let three_half = Mp::from_f64(1.5, self.bits);
        let m1 = self.m(&self.a, &half, &x);
        let m2 = self.m(&self.ap, &three_half, &x);
        let u = m1.times_real(&self.c1).plus(&sx.times(&m2).times_real(&self.c2));
        let xa = ln_sx.times_real(&self.a.scaled(2.0)).exp();
        let full = xa.times(&u);
        let one = Mp::from_f64(1.0, self.bits);
        let minus_inv_x = Cx::real(one.negated()).over(&x);
        let mut t = Cx::real(one.clone());
        let mut partial = Cx::zero_like(&one);
        for j in 0..n {
            partial = partial.plus(&t);
            let jf = Mp::from_f64(j as f64, self.bits);
            let f = self.a.plus(&jf).times(&self.ap.plus(&jf)).over(&jf.plus(&one));
            t = t.times(&minus_inv_x).times_real(&f);
        }
        full.minus(&partial)
    }
}

/// Mantissa bits for the exact remainder at X = lambda r^2 / (2 eps).
fn kummer_bits(x: f64, floor: usize) -> usize {
    floor.max((2.2 * x / LN_2).ceil() as usize + 160)
}

#[derive(Clone, Debug, Serialize)]
pub struct RemainderPoint {
    pub epsilon: f64,
    /// lambda r^2 / (2 eps)
    pub x: f64,
    pub n: usize,
    pub log_remainder: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RemainderScaling {
    pub r: f64,
    pub points: Vec<RemainderPoint>,
    /// d ln|R_N| / d(lambda r^2 / 2 eps); the prediction is -1
    pub slope: f64,
    pub slope_rel_error: f64,
}

/// |R_N| at the optimal N on the real axis (theta = 0) for the frozen-h problem, over a set of
/// epsilons, with the log-linear fit against lambda r^2/(2 eps).
pub fn remainder_scaling(h0: f64, lambda: f64, r: f64, epsilons: &[f64], n0: i64, bits: usize) -> Result<RemainderScaling> {
    if epsilons.len() < 2 {
        return Err(Error::Precondition("need at least two epsilons".into()));
    }
    let points: Vec<Result<RemainderPoint>> = exec::map(epsilons, |&eps| {
        let x = lambda * r * r / (2.0 * eps);
        let n = optimal_index(lambda, r, eps, n0);
        if n < 1 {
            return Err(Error::Precondition("optimal index below 1".into()));
        }
        let b = kummer_bits(x, bits);
        let k = Kummer::new(h0, b);
        let scale = (lambda / (2.0 * eps)).sqrt() * r;
        let sx = Cx::real(Mp::from_f64(scale, b));
        let lsx = Cx::real(Mp::from_f64(scale, b).ln());
        let rem = k.remainder(&sx, &lsx, n as usize);
        // R_N = s^-h0 times the normalised remainder
        let log_remainder = rem.log_polar().0 - h0 * r.ln();
        Ok(RemainderPoint { epsilon: eps, x, n: n as usize, log_remainder })
    });
    let points: Vec<RemainderPoint> = points.into_iter().collect::<Result<_>>()?;
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.log_remainder).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.x - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.x - mx) * (p.log_remainder - my)).sum();
    let slope = sxy / sxx;
    Ok(RemainderScaling { r, points, slope, slope_rel_error: (slope + 1.0).abs() })
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothingProfile {
    pub epsilon: f64,
    pub r: f64,
    pub n_opt: usize,
    pub theta: Vec<f64>,
    /// R_N / ((-x)^(h0 - 1/2) e^x) with x = lambda (u - u*)^2 / (2 eps)
    pub measured: Vec<Complex64>,
    /// erf(sqrt(lambda/eps) r (pi/2 - theta))
    pub erf_term: Vec<f64>,
    /// measured ~ K (S - erf_term)
    pub stokes_constant: Complex64,
    pub prefactor: Complex64,
    pub correlation: f64,
    pub scale_predicted: f64,
    /// erf scale maximising the correlation
    pub scale_fitted: f64,
}

impl SmoothingProfile {
    /// S - erf(...) with the fitted constant.
    pub fn predicted(&self) -> Vec<Complex64> {
        self.erf_term.iter().map(|e| self.stokes_constant - e).collect()
    }
}

/// |Pearson correlation| between complex data and a real predictor, with the affine fit.
fn affine_correlation(p: &[Complex64], e: &[f64]) -> (f64, Complex64, Complex64) {
    let n = p.len() as f64;
    let me = e.iter().sum::<f64>() / n;
    let mp = p.iter().sum::<Complex64>() / n;
    let see: f64 = e.iter().map(|x| (x - me).powi(2)).sum();
    let spp: f64 = p.iter().map(|z| (z - mp).norm_sqr()).sum();
    let sep: Complex64 = e.iter().zip(p).map(|(x, z)| (z - mp) * (x - me)).sum();
    if see == 0.0 || spp == 0.0 {
        return (0.0, mp, Complex64::new(0.0, 0.0));
    }
    let b = sep / see;
    (sep.norm() / (see * spp).sqrt(), mp - b * me, b)
}

/// Optimally truncated remainder of the frozen-h singular expansion at u - u* = r e^{i theta},
/// divided by the switched exponential, against the error-function prediction.
pub fn stokes_smoothing_profile(h0: f64, lambda: f64, r: f64, epsilon: f64, thetas: &[f64], n0: i64, bits: usize) -> Result<SmoothingProfile> {
    if thetas.len() < 3 || !(thetas.iter().any(|&t| t < FRAC_PI_2) && thetas.iter().any(|&t| t > FRAC_PI_2)) {
        return Err(Error::Precondition("theta grid must straddle pi/2".into()));
    }
    let n = optimal_index(lambda, r, epsilon, n0);
    if n < 1 {
        return Err(Error::Precondition("optimal index below 1".into()));
    }
    let xbig = lambda * r * r / (2.0 * epsilon);
    let b = kummer_bits(xbig, bits);
    let k = Kummer::new(h0, b);
    let measured: Vec<Complex64> = exec::map(thetas, |&th| {
        let scale = Mp::from_f64((lambda / (2.0 * epsilon)).sqrt() * r, b);
        let t = Mp::from_f64(th, b);
        let sx = Cx::new(scale.times(&t.cos()), scale.times(&t.sin()));
        let lsx = Cx::new(scale.ln(), t.clone());
        let rem = k.remainder(&sx, &lsx, n as usize);
        // (-x)^(h0 - 1/2) e^x with arg(-x) = 2 theta - pi
        let xm = Mp::from_f64(xbig, b);
        let g = Mp::from_f64(h0 - 0.5, b);
        let arg = t.scaled(2.0).minus(&Mp::pi(b));
        let pw = Cx::new(g.times(&xm.ln()), g.times(&arg));
        let ex = Cx::new(xm.times(&t.scaled(2.0).cos()), xm.times(&t.scaled(2.0).sin()));
        let den = pw.plus(&ex).exp();
        rem.over(&den).to_c64()
    });
    let kp = (lambda / epsilon).sqrt() * r;
    let erf_at = |kappa: f64| -> Vec<f64> { thetas.iter().map(|t| erf(kappa * (FRAC_PI_2 - t))).collect() };
    let erf_term = erf_at(kp);
    let (correlation, a, bb) = affine_correlation(&measured, &erf_term);
    // measured = a + bb erf = K (S - erf)
    let prefactor = -bb;
    let stokes_constant = a / prefactor;
    let corr_at = |lk: f64| affine_correlation(&measured, &erf_at(lk.exp())).0;
    let (mut lo, mut hi) = (kp.ln() - 2.0, kp.ln() + 2.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if corr_at(m1) > corr_at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(SmoothingProfile {
        epsilon,
        r,
        n_opt: n as usize,
        theta: thetas.to_vec(),
        measured,
        erf_term,
        stokes_constant,
        prefactor,
        correlation,
        scale_predicted: kp,
        scale_fitted: (0.5 * (lo + hi)).exp(),
    })
}

/// Evenly spaced angles in [pi/2 - half_width, pi/2 + half_width].
pub fn theta_grid(half_width: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count).map(|i| FRAC_PI_2 - half_width + 2.0 * half_width * i as f64 / (count - 1) as f64).collect()
}
