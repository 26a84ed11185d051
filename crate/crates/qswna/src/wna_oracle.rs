//! Finite-epsilon quadrature of the series-built integrands behind c20, c22 and I0..I5.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::Result;
use crate::params::{ModelParams, SteadyState};
use crate::quad::integrate;
use crate::series::{eval_series, eval_series_deriv, q_table, s_table, w_table, SeriesContext, SeriesTable};
use crate::wna::{analyse_at, WnaOptions, WnaReport};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OracleValues {
    pub epsilon: f64,
    pub i0: f64,
    pub i1_per_dprime: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
    pub i5: f64,
    pub c20: f64,
    pub c22: f64,
    /// alpha0 * int u eta du
    pub signal_integral: f64,
    /// -int g' n*' W du
    pub adjoint_integral: f64,
}

impl OracleValues {
    pub fn as_array(&self) -> [f64; 8] {
        [self.i0, self.i1_per_dprime, self.i2, self.i3, self.i4, self.i5, self.c20, self.c22]
    }
}

pub const NAMES: [&str; 8] = ["I0", "I1", "I2", "I3", "I4", "I5", "c20", "c22"];

pub fn leading_array(r: &WnaReport) -> [f64; 8] {
    [r.i0, r.i1_per_dprime, r.i2, r.i3, r.i4, r.i5, r.c20, r.c22]
}

struct Amp<'a> {
    t: &'a SeriesTable,
    us: f64,
    lam: f64,
    eps: f64,
    j: usize,
}

impl Amp<'_> {
    fn val(&self, u: f64) -> f64 {
        eval_series(self.t, self.us, self.lam, u, self.j, usize::MAX, self.eps, false).value
    }
    fn der(&self, u: f64) -> f64 {
        eval_series_deriv(self.t, self.us, u, self.j, usize::MAX, self.eps)
    }
    /// termwise antiderivative vanishing at u*
    fn anti(&self, u: f64) -> f64 {
        let s = u - self.us;
        let mut tot = 0.0;
        for j in 0..=self.j.min(self.t.j_max) {
            let mut acc = 0.0;
            let mut p = s;
            for (l, c) in self.t.coeffs[j].iter().enumerate() {
                acc += c * p / (l as f64 + 1.0);
                p *= s;
            }
            tot += self.eps.powi(j as i32) * acc;
        }
        tot
    }
}

fn integ(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let scale = integrate(|u| f(u).abs(), a, b, 0.0, 1e-6);
    integrate(f, a, b, 1e-14 * scale, 0.0)
}

/// Quadrature values at finite epsilon, with j <= `j_trunc` terms of every amplitude series.
pub fn quadrature_values(params: &ModelParams, steady: &SteadyState, k: f64, eps: f64, j_trunc: usize) -> Result<(WnaReport, OracleValues)> {
    let opts = WnaOptions { j_max: j_trunc.max(2), l_max: 2 * j_trunc.max(2) + 56, m_max: 2 * j_trunc.max(2) + 60 };
    let rep = analyse_at(params, steady, k, &WnaOptions::default())?;
    let dp0 = rep.d_prime_critical;
    let ctx = SeriesContext::new(params, steady, k, dp0, opts.m_max);
    let q = q_table(&ctx, opts.j_max, opts.l_max)?;
    let w = w_table(&ctx, opts.j_max, opts.l_max, 1)?;
    let s_lead = s_table(&ctx, &q, rep.c22, opts.j_max, opts.l_max)?;
    let s_zero = s_table(&ctx, &q, 0.0, opts.j_max, opts.l_max)?;
    let s_one = s_table(&ctx, &q, 1.0, opts.j_max, opts.l_max)?;

    let lam = params.lambda;
    let us = steady.u_star;
    let (g1, g2, rho, a0) = (ctx.g1, ctx.g2, ctx.rho, ctx.alpha0);
    let mk = |t| Amp { t, us, lam, eps, j: j_trunc };
    let (qa, wa) = (mk(&q), mk(&w));
    let (sl, s0, s1) = (mk(&s_lead), mk(&s_zero), mk(&s_one));

    let width = (eps / lam).sqrt();
    let (lo, hi) = (us - 12.0 * width, us + 12.0 * width);
    let env = |u: f64| (-lam * (u - us).powi(2) / (2.0 * eps)).exp();
    let nn = rho * (lam / (2.0 * PI * eps)).sqrt();
    let e32 = eps.powf(-1.5);
    let e52 = eps.powf(-2.5);

    let eta = |u: f64| e32 * qa.val(u) * env(u);
    let deta = |u: f64| e32 * (qa.der(u) - lam * (u - us) * qa.val(u) / eps) * env(u);
    let dnstar = |u: f64| -lam * (u - us) / eps * nn * env(u);

    let i0 = integ(|u| eta(u) * wa.val(u), lo, hi);
    let delta = params.motility.d_star - params.motility.d_inf;
    let rate = -dp0 / delta;
    let d_unit = |u: f64| {
        let s = u - us;
        let c = (rate * s).cosh();
        s / (c * c)
    };
    let i1 = integ(|u| d_unit(u) * eta(u) * wa.val(u), lo, hi);
    let i2 = integ(|u| dnstar(u) * wa.val(u), lo, hi);
    let i3 = integ(|u| deta(u) * wa.val(u), lo, hi);

    // eta20 = r e, r = A c20 s + e^{-5/2} (g'/2) Q + rbar sqrt(lambda/2 pi eps) + (g''/4) part
    let rbar = -0.5 * g1 * e52 * integ(|u| qa.anti(u) * env(u), lo, hi);
    let pref = rho * (lam / (2.0 * PI * eps.powi(3))).sqrt();
    let r_of = |u: f64, c20: f64| {
        (c20 * g1 + 0.25 * g2) * pref * (u - us) + e52 * 0.5 * g1 * qa.anti(u) + rbar * (lam / (2.0 * PI * eps)).sqrt()
    };
    let dr_of = |u: f64, c20: f64| (c20 * g1 + 0.25 * g2) * pref + e52 * 0.5 * g1 * qa.val(u);
    let deta20 = |u: f64, c20: f64| (dr_of(u, c20) - lam * (u - us) * r_of(u, c20) / eps) * env(u);
    let i4 = integ(|u| deta20(u, rep.c20) * wa.val(u), lo, hi);
    let m0 = integ(|u| u * r_of(u, 0.0) * env(u), lo, hi);
    let m1 = integ(|u| u * r_of(u, 1.0) * env(u), lo, hi) - m0;
    let c20 = a0 * m0 / (params.beta - a0 * m1);

    let deta22 = |u: f64, a: &Amp| e52 * (a.der(u) - lam * (u - us) * a.val(u) / eps) * env(u);
    let i5 = integ(|u| deta22(u, &sl) * wa.val(u), lo, hi);
    let n0 = integ(|u| u * e52 * s0.val(u) * env(u), lo, hi);
    let n1 = integ(|u| u * e52 * s1.val(u) * env(u), lo, hi) - n0;
    let k2 = k * k;
    let c22 = a0 * n0 / (4.0 * params.d_c * k2 + params.beta - a0 * n1);

    let signal = a0 * integ(|u| u * eta(u), lo, hi);
    let adjoint = -integ(|u| g1 * dnstar(u) * wa.val(u), lo, hi);

    Ok((
        rep,
        OracleValues { epsilon: eps, i0, i1_per_dprime: i1, i2, i3, i4, i5, c20, c22, signal_integral: signal, adjoint_integral: adjoint },
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrendRow {
    pub name: String,
    pub leading: f64,
    pub err_large: f64,
    pub err_small: f64,
    pub ratio: f64,
}

/// Errors of the leading-order values against quadrature at two epsilons.
pub fn epsilon_trend(params: &ModelParams, eps_large: f64, eps_small: f64) -> Result<Vec<TrendRow>> {
    let st = params.steady()?;
    let k = params.k1();
    let (rep, a) = quadrature_values(params, &st, k, eps_large, 3)?;
    let (_, b) = quadrature_values(params, &st, k, eps_small, 3)?;
    let lead = leading_array(&rep);
    let (va, vb) = (a.as_array(), b.as_array());
    Ok((0..8)
        .map(|i| {
            let ea = (va[i] - lead[i]).abs();
            let eb = (vb[i] - lead[i]).abs();
            TrendRow { name: NAMES[i].to_string(), leading: lead[i], err_large: ea, err_small: eb, ratio: ea / eb }
        })
        .collect())
}
