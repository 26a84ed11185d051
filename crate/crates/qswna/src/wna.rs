//! Second- and third-order weakly nonlinear coefficients: c20, c22, I0..I5, mu and b.

use serde::Serialize;
use std::f64::consts::PI;

use crate::dispersion::critical_dprime;
use crate::error::{Error, Result};
use crate::params::{ModelParams, SteadyState};
use crate::series::{q_table, s_table, w_table, SeriesContext, SeriesTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Criticality {
    Supercritical,
    Subcritical,
    Degenerate,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WnaOptions {
    pub j_max: usize,
    pub l_max: usize,
    pub m_max: usize,
}

impl Default for WnaOptions {
    fn default() -> Self {
        WnaOptions { j_max: 4, l_max: 24, m_max: 64 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WnaTables {
    pub ctx: SeriesContext,
    pub q: SeriesTable,
    pub w: SeriesTable,
    pub wt: SeriesTable,
    pub s: SeriesTable,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Integrals {
    pub i0: f64,
    /// I1 for unit d'
    pub i1_per_dprime: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
    pub i5: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WnaReport {
    pub k: f64,
    pub c_star: f64,
    pub u_star: f64,
    pub d0: f64,
    pub d_prime_critical: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub c20: f64,
    pub c22: f64,
    #[serde(rename = "I0")]
    pub i0: f64,
    #[serde(rename = "I1_per_dprime")]
    pub i1_per_dprime: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    #[serde(rename = "I3")]
    pub i3: f64,
    #[serde(rename = "I4")]
    pub i4: f64,
    #[serde(rename = "I5")]
    pub i5: f64,
    pub mu: f64,
    /// sigma_1 / d' in dA/dtau = sigma_1 A + cubic A^3
    pub linear_rate_per_dprime: f64,
    /// -mu/(I0+1)
    pub cubic_rate: f64,
    /// NaN when mu = 0
    pub b: f64,
    /// integral of eta over u at leading order: rho amplitude per unit c amplitude
    pub eta_mass: f64,
    pub criticality: Criticality,
    pub rho_star: f64,
    pub alpha0: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BranchPrediction {
    pub rho_star: f64,
    /// coefficient of cos(kx) in rho(x), non-negative; the pair is +/- this value
    pub amplitude: f64,
    pub k: f64,
    /// sign of D'* - D'0 on which the branch exists
    pub valid_side: f64,
}

impl BranchPrediction {
    pub fn delta_rho(&self) -> f64 {
        2.0 * self.amplitude
    }

    pub fn rho(&self, x: f64, sign: f64) -> f64 {
        self.rho_star + sign * self.amplitude * (self.k * x).cos()
    }
}

/// Local bifurcation parameter d' for the tanh family: D'* - D'0.
pub fn dprime_offset(d_prime_star: f64, d_prime_critical: f64) -> f64 {
    d_prime_star - d_prime_critical
}

pub fn build_tables(params: &ModelParams, steady: &SteadyState, k: f64, d_prime0: f64, c22: f64, opts: &WnaOptions) -> Result<WnaTables> {
    let ctx = SeriesContext::new(params, steady, k, d_prime0, opts.m_max.max(opts.l_max + 2));
    let q = q_table(&ctx, opts.j_max, opts.l_max)?;
    let w = w_table(&ctx, opts.j_max, opts.l_max, 1)?;
    let wt = w_table(&ctx, opts.j_max, opts.l_max, 2)?;
    let s = s_table(&ctx, &q, c22, opts.j_max, opts.l_max)?;
    Ok(WnaTables { ctx, q, w, wt, s })
}

pub fn compute_c20(ctx: &SeriesContext, q: &SeriesTable) -> Result<f64> {
    let den = 4.0 * (ctx.lambda * ctx.beta - ctx.alpha0 * ctx.rho * ctx.g1);
    if den <= 0.0 {
        return Err(Error::Precondition("lambda beta <= alpha0 rho* g'(c*)".into()));
    }
    let comb = ctx.lambda * q.get(1, 0)? + q.get(0, 2)?;
    Ok(ctx.alpha0 * (ctx.rho * ctx.g2 + (8.0 * PI / ctx.lambda.powi(3)).sqrt() * ctx.g1 * comb) / den)
}

pub fn compute_c22(ctx: &SeriesContext, q: &SeriesTable, wt: &SeriesTable) -> Result<f64> {
    let k2 = ctx.k * ctx.k;
    let wt1 = wt.get(0, 1)?;
    let wt2 = wt.get(0, 2)?;
    let den = 4.0 * (4.0 * ctx.d_c * k2 + ctx.beta - ctx.rho * ctx.g1 * wt1);
    if den.abs() < 1e-14 {
        return Err(Error::Degenerate("2k resonance in c22".into()));
    }
    let comb = ctx.lambda * q.get(1, 0)? + q.get(0, 2)?;
    let num = ctx.rho * ctx.g2 * wt1
        + 2.0 * ctx.g1 * (2.0 * PI / ctx.lambda.powi(3)).sqrt() * (comb * wt1 + 2.0 * q.get(0, 1)? * wt2);
    Ok(num / den)
}

/// Leading-order I0..I5. I1 is returned per unit d'.
pub fn compute_integrals(ctx: &SeriesContext, q: &SeriesTable, w: &SeriesTable, s: &SeriesTable, c20: f64) -> Result<Integrals> {
    let lam = ctx.lambda;
    let (a0, rho, g1, g2, u) = (ctx.alpha0, ctx.rho, ctx.g1, ctx.g2, ctx.u_star);
    let d0 = ctx.d0();
    let dp = ctx.d.get(1).copied().unwrap_or(0.0);
    let kk = d0 * ctx.k * ctx.k;
    let i0 = a0 * rho * g1 * (kk - (2.0 * kk + lam) * u * dp / d0) / ((kk + lam).powi(2) * kk);
    let i1 = a0 * rho * u * g1 / (kk * (kk + lam));
    let i2 = a0 * rho * (u * dp / d0 - 1.0) / (kk + lam);
    let (w1, w2, w3) = (w.get(0, 1)?, w.get(0, 2)?, w.get(0, 3)?);
    let (q01, q02, q10) = (q.get(0, 1)?, q.get(0, 2)?, q.get(1, 0)?);
    let i3 = -(2.0 * PI / lam).sqrt() * ((q10 + q02 / lam) * w1 + 2.0 / lam * q01 * w2);
    let i4 = -(2.0 * PI / lam.powi(5)).sqrt() * g1 * ((q02 + lam * q10) * w2 + 1.5 * q01 * w3)
        - rho / lam * (2.0 * c20 * g1 + 0.5 * g2) * w2;
    let sv = |j, l| s.get(j, l);
    let i5 = -(2.0 * PI / lam).sqrt()
        * ((sv(2, 0)? + sv(1, 2)? / lam + 3.0 * sv(0, 4)? / lam.powi(2)) * w1
            + 2.0 / lam * (sv(1, 1)? + 3.0 * sv(0, 3)? / lam) * w2
            + 3.0 / lam * (sv(1, 0)? + 3.0 * sv(0, 2)? / lam) * w3);
    Ok(Integrals { i0, i1_per_dprime: i1, i2, i3, i4, i5 })
}

pub fn compute_mu(g1: f64, g2: f64, g3: f64, c20: f64, c22: f64, i: &Integrals) -> f64 {
    (c20 + 0.5 * c22) * (g2 * i.i2 + g1 * i.i3) + (g3 * i.i2 + 3.0 * g2 * i.i3) / 8.0 + g1 * (i.i4 + 0.5 * i.i5)
}

pub fn criticality(mu: f64) -> Criticality {
    if mu > 0.0 {
        Criticality::Supercritical
    } else if mu < 0.0 {
        Criticality::Subcritical
    } else {
        Criticality::Degenerate
    }
}

/// Full pipeline at wavenumber k on the given steady state.
pub fn analyse_at(params: &ModelParams, steady: &SteadyState, k: f64, opts: &WnaOptions) -> Result<WnaReport> {
    let dp0 = critical_dprime(params, steady, k)?;
    // c22 enters only the s table, so build q and W~ first
    let pre = build_tables(params, steady, k, dp0, 0.0, opts)?;
    let c20 = compute_c20(&pre.ctx, &pre.q)?;
    let c22 = compute_c22(&pre.ctx, &pre.q, &pre.wt)?;
    let s = s_table(&pre.ctx, &pre.q, c22, opts.j_max, opts.l_max)?;
    let ints = compute_integrals(&pre.ctx, &pre.q, &pre.w, &s, c20)?;
    let g3 = params.g(steady.c_star, 3);
    let ctx = &pre.ctx;
    let mu = compute_mu(ctx.g1, ctx.g2, g3, c20, c22, &ints);
    let d0 = ctx.d0();
    let kk = d0 * k * k;
    let lam = params.lambda;
    let (a0, rho, g1, u) = (params.alpha0, params.rho_star, ctx.g1, steady.u_star);
    let denom = kk * (kk + lam).powi(2) + a0 * rho * g1 * (kk - (2.0 * kk + lam) * u * dp0 / d0);
    if denom == 0.0 {
        return Err(Error::Degenerate("amplitude equation denominator vanishes".into()));
    }
    let lin = -a0 * rho * g1 * u * (kk + lam) * k * k / denom;
    let b = if mu == 0.0 {
        f64::NAN
    } else {
        -2.0 * dp0 * (a0 * rho * u * g1.powi(3) / (mu.abs() * d0.powi(3) * (kk + lam).powi(3))).sqrt()
    };
    Ok(WnaReport {
        k,
        c_star: steady.c_star,
        u_star: u,
        d0,
        d_prime_critical: dp0,
        g1,
        g2: ctx.g2,
        g3,
        c20,
        c22,
        i0: ints.i0,
        i1_per_dprime: ints.i1_per_dprime,
        i2: ints.i2,
        i3: ints.i3,
        i4: ints.i4,
        i5: ints.i5,
        mu,
        linear_rate_per_dprime: lin,
        cubic_rate: -mu / (ints.i0 + 1.0),
        b,
        eta_mass: -(dp0 / d0) * rho * g1 / (kk + lam),
        criticality: criticality(mu),
        rho_star: rho,
        alpha0: a0,
        lambda: lam,
    })
}

/// Pipeline on steady-state branch 0 at k = pi/L.
pub fn analyse(params: &ModelParams) -> Result<WnaReport> {
    let st = params.steady()?;
    analyse_at(params, &st, params.k1(), &WnaOptions::default())
}

impl WnaReport {
    /// (sigma_1, cubic coefficient) of dA/dtau = sigma_1 A + cubic A^3, with delta = 1.
    pub fn amplitude_ode(&self, d_prime_star: f64) -> (f64, f64) {
        (self.linear_rate_per_dprime * dprime_offset(d_prime_star, self.d_prime_critical), self.cubic_rate)
    }

    /// Amplitude equation for the cos(kx) coefficient of rho in physical time:
    /// da/dt = r a + c a^3.
    pub fn rho_amplitude_ode(&self, d_prime_star: f64) -> (f64, f64) {
        let (r, c) = self.amplitude_ode(d_prime_star);
        (r, c / (self.eta_mass * self.eta_mass))
    }

    pub fn branch_prediction(&self, d_prime_star: f64) -> Result<BranchPrediction> {
        if self.mu == 0.0 {
            return Err(Error::Degenerate("mu = 0".into()));
        }
        let dd = dprime_offset(d_prime_star, self.d_prime_critical);
        let side = -self.mu.signum();
        if dd != 0.0 && dd.signum() != side {
            return Err(Error::NoLocalBranch);
        }
        let kk = self.d0 * self.k * self.k;
        let arg = -self.alpha0 * self.u_star * (self.rho_star * self.g1).powi(3) * dd
            / (self.mu * self.d0.powi(3) * (kk + self.lambda).powi(3));
        Ok(BranchPrediction {
            rho_star: self.rho_star,
            amplitude: self.d_prime_critical.abs() * arg.max(0.0).sqrt(),
            k: self.k,
            valid_side: side,
        })
    }

    pub fn coefficient_b(&self) -> Result<f64> {
        if self.mu == 0.0 || !self.b.is_finite() {
            return Err(Error::Degenerate("mu = 0".into()));
        }
        Ok(self.b)
    }
}

/// Sign change of mu along a rho* grid, refined by bisection.
pub fn mu_crossings(params: &ModelParams, rho_grid: &[f64]) -> Vec<f64> {
    let mu_at = |rho: f64| analyse(&params.with_rho(rho)).map(|r| r.mu).ok();
    let mus = crate::exec::map(rho_grid, |&r| mu_at(r));
    let mut out = Vec::new();
    for i in 1..rho_grid.len() {
        if let (Some(m0), Some(m1)) = (mus[i - 1], mus[i]) {
            if m0 * m1 < 0.0 {
                let (mut a, mut b, mut fa) = (rho_grid[i - 1], rho_grid[i], m0);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    match mu_at(m) {
                        Some(fm) if fm * fa > 0.0 => {
                            a = m;
                            fa = fm;
                        }
                        Some(_) => b = m,
                        None => break,
                    }
                }
                out.push(0.5 * (a + b));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_supercritical() {
        let r = analyse(&ModelParams::default()).unwrap();
        assert_eq!(r.criticality, Criticality::Supercritical);
        assert!(r.b > 0.0 && r.i0 > 0.0 && r.i2 < 0.0);
    }

    #[test]
    fn b_matches_branch_prediction() {
        let r = analyse(&ModelParams::default()).unwrap();
        let d = r.d_prime_critical - 0.01;
        let bp = r.branch_prediction(d).unwrap();
        let lhs = r.b * 0.01f64.sqrt() * r.rho_star;
        assert!((lhs - bp.delta_rho()).abs() < 1e-14 * lhs);
        assert!(matches!(r.branch_prediction(r.d_prime_critical + 0.01), Err(Error::NoLocalBranch)));
    }
}
