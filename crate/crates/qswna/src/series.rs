//! Power-series recursions for the WKBJ amplitudes q, W, W~ and s around u*.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{ModelParams, SteadyState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SeriesKind {
    Q,
    W,
    Wtilde,
    S,
}

impl SeriesKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q" => Some(SeriesKind::Q),
            "w" => Some(SeriesKind::W),
            "wtilde" | "w~" => Some(SeriesKind::Wtilde),
            "s" => Some(SeriesKind::S),
            _ => None,
        }
    }
}

/// Everything the recursions need, evaluated at the bifurcation.
#[derive(Clone, Debug, Serialize)]
pub struct SeriesContext {
    pub k: f64,
    /// D^(m)(u*)/m!
    pub d: Vec<f64>,
    pub lambda: f64,
    pub rho: f64,
    pub g1: f64,
    pub g2: f64,
    pub alpha0: f64,
    pub u_star: f64,
    pub beta: f64,
    pub d_c: f64,
}

impl SeriesContext {
    /// Context with the motility slope set to `d_prime` (usually the critical value).
    pub fn new(params: &ModelParams, steady: &SteadyState, k: f64, d_prime: f64, m_max: usize) -> Self {
        let mot = params.motility.with_dprime(d_prime);
        let mut d = mot.taylor_normalized(m_max);
        // Taylor data at u*, which differs from the profile centre only if u_star_ref is set
        let u_ref = params.u_ref(steady);
        if (u_ref - steady.u_star).abs() > 0.0 {
            d = shifted_taylor(&mot, u_ref, steady.u_star, m_max);
        }
        SeriesContext {
            k,
            d,
            lambda: params.lambda,
            rho: params.rho_star,
            g1: params.g(steady.c_star, 1),
            g2: params.g(steady.c_star, 2),
            alpha0: params.alpha0,
            u_star: steady.u_star,
            beta: params.beta,
            d_c: params.d_c,
        }
    }

    pub fn d0(&self) -> f64 {
        self.d[0]
    }

    fn dm(&self, m: usize) -> f64 {
        self.d.get(m).copied().unwrap_or(0.0)
    }

    /// sqrt(lambda^3 / 2 pi)
    pub fn s_const(&self) -> f64 {
        (self.lambda.powi(3) / (2.0 * PI)).sqrt()
    }
}

/// Taylor coefficients of the tanh profile about a point other than its centre, by
/// composing tanh(a(u0 + s - u_ref)) with the addition formula in series form.
fn shifted_taylor(mot: &crate::params::MotilitySpec, u_ref: f64, u0: f64, m_max: usize) -> Vec<f64> {
    let delta = mot.d_star - mot.d_inf;
    if delta == 0.0 {
        let mut v = vec![0.0; m_max + 1];
        v[0] = mot.d_star;
        return v;
    }
    let a = -mot.d_prime_star / delta;
    let t0 = (a * (u0 - u_ref)).tanh();
    // T(s) = tanh(w0 + a s) satisfies T' = a (1 - T^2)
    let mut t = vec![0.0; m_max + 1];
    t[0] = t0;
    for n in 0..m_max {
        let sq: f64 = (0..=n).map(|i| t[i] * t[n - i]).sum();
        let one = if n == 0 { 1.0 } else { 0.0 };
        t[n + 1] = a * (one - sq) / (n as f64 + 1.0);
    }
    let mut out: Vec<f64> = t.iter().map(|x| -delta * x).collect();
    out[0] += mot.d_star;
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesTable {
    pub kind: SeriesKind,
    /// coeffs[j][l]; row j holds entries l = 0..valid[j]
    pub coeffs: Vec<Vec<f64>>,
    pub j_max: usize,
    pub l_max: usize,
    pub k_eff: f64,
    pub c22: Option<f64>,
}

impl SeriesTable {
    pub fn get(&self, j: usize, l: usize) -> Result<f64> {
        self.coeffs
            .get(j)
            .and_then(|r| r.get(l))
            .copied()
            .ok_or_else(|| Error::MissingEntry(format!("{:?}^({j})_{l}", self.kind)))
    }

    /// Zero for negative l, otherwise the entry.
    fn at(&self, j: usize, l: isize) -> Result<f64> {
        if l < 0 {
            Ok(0.0)
        } else {
            self.get(j, l as usize)
        }
    }

    pub fn row_len(&self, j: usize) -> usize {
        self.coeffs.get(j).map_or(0, |r| r.len())
    }
}

pub fn default_l_max(j_max: usize) -> usize {
    2 * j_max + 8
}

fn check_depth(j_max: usize, l_max: usize) -> Result<()> {
    if l_max < 2 * j_max {
        return Err(Error::InvalidParam(format!("l_max = {l_max} too small for j_max = {j_max}")));
    }
    Ok(())
}

/// Shared first-order recursion for q, W and W~: row j from row j-1 plus a source.
fn linear_table(
    ctx: &SeriesContext,
    kind: SeriesKind,
    kmul: f64,
    j_max: usize,
    l_max: usize,
    src0: &dyn Fn(usize) -> f64,
) -> Result<SeriesTable> {
    check_depth(j_max, l_max)?;
    let k2 = (kmul * ctx.k).powi(2);
    let d0k2 = ctx.d0() * k2;
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(j_max + 1);
    for j in 0..=j_max {
        let len = l_max + 1 - 2 * j;
        let mut row = vec![0.0; len];
        for l in 0..len {
            let source = if j == 0 { src0(l) } else { ((l + 1) * (l + 2)) as f64 * coeffs[j - 1][l + 2] };
            let conv: f64 = (1..=l).map(|m| ctx.dm(m) * row[l - m]).sum();
            let den = d0k2 + l as f64 * ctx.lambda;
            if den <= 0.0 {
                return Err(Error::Degenerate(format!("denominator {den} at l = {l}")));
            }
            row[l] = (source - k2 * conv) / den;
        }
        coeffs.push(row);
    }
    Ok(SeriesTable { kind, coeffs, j_max, l_max, k_eff: kmul * ctx.k, c22: None })
}

pub fn q_table(ctx: &SeriesContext, j_max: usize, l_max: usize) -> Result<SeriesTable> {
    let src = ctx.s_const() * ctx.rho * ctx.g1;
    linear_table(ctx, SeriesKind::Q, 1.0, j_max, l_max, &|l| if l == 1 { src } else { 0.0 })
}

/// W with wavenumber multiplier 1, or W~ with multiplier 2.
pub fn w_table(ctx: &SeriesContext, j_max: usize, l_max: usize, k_multiplier: u32) -> Result<SeriesTable> {
    let kind = match k_multiplier {
        1 => SeriesKind::W,
        2 => SeriesKind::Wtilde,
        _ => return Err(Error::InvalidParam("k_multiplier must be 1 or 2".into())),
    };
    let (a0, us) = (ctx.alpha0, ctx.u_star);
    linear_table(ctx, kind, k_multiplier as f64, j_max, l_max, &|l| match l {
        0 => a0 * us,
        1 => a0,
        _ => 0.0,
    })
}

pub fn s_table(ctx: &SeriesContext, q: &SeriesTable, c22: f64, j_max: usize, l_max: usize) -> Result<SeriesTable> {
    check_depth(j_max, l_max)?;
    if q.kind != SeriesKind::Q {
        return Err(Error::InvalidParam("s_table needs a Q table".into()));
    }
    let k2 = 4.0 * ctx.k * ctx.k;
    let d0k2 = ctx.d0() * k2;
    let half_g = 0.5 * ctx.g1;
    let jump = ctx.rho * ctx.s_const() * (ctx.g1 * c22 + 0.25 * ctx.g2);
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(j_max + 1);
    for j in 0..=j_max {
        let mut len = l_max + 1 - 2 * j;
        // row j reads q^(j)_(l-1) and q^(j-1)_(l+1)
        len = len.min(q.row_len(j) + 1);
        if j > 0 {
            len = len.min(q.row_len(j - 1).saturating_sub(1));
            len = len.min(coeffs[j - 1].len().saturating_sub(2));
        }
        let mut row = vec![0.0; len];
        for l in 0..len {
            let li = l as isize;
            let mut num = 0.0;
            if j > 0 {
                num += ((l + 1) * (l + 2)) as f64 * coeffs[j - 1][l + 2];
                num -= half_g * ((l + 1) as f64 * q.get(j - 1, l + 1)?);
            }
            num += half_g * ctx.lambda * q.at(j, li - 1)?;
            if j == 1 && l == 1 {
                num += jump;
            }
            let conv: f64 = (1..=l).map(|m| ctx.dm(m) * row[l - m]).sum();
            num -= k2 * conv;
            let den = d0k2 + l as f64 * ctx.lambda;
            if den <= 0.0 {
                return Err(Error::Degenerate(format!("denominator {den} at l = {l}")));
            }
            row[l] = num / den;
        }
        coeffs.push(row);
    }
    Ok(SeriesTable { kind: SeriesKind::S, coeffs, j_max, l_max, k_eff: 2.0 * ctx.k, c22: Some(c22) })
}

/// Description of an amplitude hierarchy for the brute-force oracle.
#[derive(Clone, Debug)]
pub struct AmplitudeOdeSpec {
    pub kind: SeriesKind,
    /// 1 for q and W, 2 for W~ and s
    pub k_multiplier: u32,
    /// scale applied to the inhomogeneity
    pub source_scale: f64,
    pub c22: f64,
}

impl AmplitudeOdeSpec {
    pub fn for_kind(kind: SeriesKind, c22: f64) -> Self {
        let k_multiplier = match kind {
            SeriesKind::Q | SeriesKind::W => 1,
            _ => 2,
        };
        AmplitudeOdeSpec { kind, k_multiplier, source_scale: 1.0, c22 }
    }
}

/// Truncated power series arithmetic used by the oracle.
mod ps {
    pub fn deriv(a: &[f64]) -> Vec<f64> {
        a.iter().enumerate().skip(1).map(|(i, &c)| i as f64 * c).collect()
    }
    pub fn times_s(a: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0];
        v.extend_from_slice(a);
        v
    }
    pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }
}

/// Solves (lambda s d/ds + M k^2 D(s)) y = rhs on n coefficients; the operator matrix is lower triangular.
fn oracle_solve(ctx: &SeriesContext, kmul: f64, rhs: &[f64], n: usize) -> Result<Vec<f64>> {
    let k2 = (kmul * ctx.k).powi(2);
    let mut a = DMatrix::<f64>::zeros(n, n);
    for row in 0..n {
        for col in 0..=row {
            // coefficient of s^row in lambda s (s^col)' + k^2 D(s) s^col
            let mut v = k2 * ctx.dm(row - col);
            if row == col {
                v += ctx.lambda * col as f64;
            }
            a[(row, col)] = v;
        }
    }
    let b = DVector::from_iterator(n, (0..n).map(|i| rhs.get(i).copied().unwrap_or(0.0)));
    let x = a.solve_lower_triangular(&b).ok_or_else(|| Error::Degenerate("resonant oracle operator".into()))?;
    Ok(x.iter().copied().collect())
}

/// Independent solution of the amplitude hierarchies by direct coefficient matching.
pub fn oracle_series(spec: &AmplitudeOdeSpec, ctx: &SeriesContext, j_max: usize, l_max: usize) -> Result<SeriesTable> {
    check_depth(j_max, l_max)?;
    let sc = spec.source_scale;
    let lam = ctx.lambda;
    let solve_chain = |kmul: f64, src0: Vec<f64>| -> Result<Vec<Vec<f64>>> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for j in 0..=j_max {
            let n = l_max + 1 - 2 * j;
            let rhs = if j == 0 { src0.clone() } else { ps::deriv(&ps::deriv(&rows[j - 1])) };
            rows.push(oracle_solve(ctx, kmul, &rhs, n)?);
        }
        Ok(rows)
    };
    let kind = spec.kind;
    let kmul = spec.k_multiplier as f64;
    let coeffs = match kind {
        SeriesKind::Q => {
            // source rho g' sqrt(lambda^3/2pi) s
            solve_chain(kmul, vec![0.0, sc * ctx.rho * ctx.g1 * ctx.s_const()])?
        }
        SeriesKind::W | SeriesKind::Wtilde => {
            // source alpha0 u = alpha0 (u* + s)
            solve_chain(kmul, vec![sc * ctx.alpha0 * ctx.u_star, sc * ctx.alpha0])?
        }
        SeriesKind::S => {
            let q = solve_chain(1.0, vec![0.0, sc * ctx.rho * ctx.g1 * ctx.s_const()])?;
            let g = 0.5 * ctx.g1;
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for j in 0..=j_max {
                let mut n = l_max + 1 - 2 * j;
                n = n.min(q[j].len() + 1);
                if j > 0 {
                    n = n.min(q[j - 1].len() - 1);
                }
                let mut rhs = vec![0.0; n + 2];
                // (g'/2) lambda s q_j
                ps::axpy(&mut rhs, g * lam, &ps::times_s(&q[j]));
                if j > 0 {
                    ps::axpy(&mut rhs, 1.0, &ps::deriv(&ps::deriv(&rows[j - 1])));
                    ps::axpy(&mut rhs, -g, &ps::deriv(&q[j - 1]));
                }
                if j == 1 {
                    rhs[1] += sc * ctx.rho * ctx.s_const() * (ctx.g1 * spec.c22 + 0.25 * ctx.g2);
                }
                rhs.truncate(n);
                rows.push(oracle_solve(ctx, 2.0, &rhs, n)?);
            }
            rows
        }
    };
    Ok(SeriesTable {
        kind,
        coeffs,
        j_max,
        l_max,
        k_eff: kmul * ctx.k,
        c22: if kind == SeriesKind::S { Some(spec.c22) } else { None },
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    /// set when the last retained l-terms are not decreasing
    pub diverging: bool,
}

/// Sum_j eps^j Sum_l a^(j)_l (u-u*)^l, optionally times the WKBJ envelope.
pub fn eval_series(table: &SeriesTable, u_star: f64, lambda: f64, u: f64, j_cut: usize, l_cut: usize, epsilon: f64, envelope: bool) -> SeriesValue {
    let s = u - u_star;
    let mut total = 0.0;
    let mut diverging = false;
    for j in 0..=j_cut.min(table.j_max) {
        let row = &table.coeffs[j];
        let n = row.len().min(l_cut.saturating_add(1));
        let mut acc = 0.0;
        let mut p = 1.0;
        let mut last = [0.0f64; 2];
        for (l, c) in row.iter().take(n).enumerate() {
            let term = c * p;
            acc += term;
            p *= s;
            if l + 2 >= n {
                last[l + 2 - n] = term.abs();
            }
        }
        if n >= 4 && last[1] > last[0] && last[1] > 1e-12 * acc.abs() {
            diverging = true;
        }
        total += epsilon.powi(j as i32) * acc;
    }
    if envelope {
        let pre = match table.kind {
            SeriesKind::Q => epsilon.powf(-1.5),
            SeriesKind::S => epsilon.powf(-2.5),
            _ => 1.0,
        };
        total *= pre * (-lambda * s * s / (2.0 * epsilon)).exp();
    }
    SeriesValue { value: total, diverging }
}

/// Derivative in u of the truncated series (no envelope).
pub fn eval_series_deriv(table: &SeriesTable, u_star: f64, u: f64, j_cut: usize, l_cut: usize, epsilon: f64) -> f64 {
    let s = u - u_star;
    let mut total = 0.0;
    for j in 0..=j_cut.min(table.j_max) {
        let row = &table.coeffs[j];
        let n = row.len().min(l_cut.saturating_add(1));
        let mut acc = 0.0;
        let mut p = 1.0;
        for (l, c) in row.iter().enumerate().take(n).skip(1) {
            acc += l as f64 * c * p;
            p *= s;
        }
        total += epsilon.powi(j as i32) * acc;
    }
    total
}
