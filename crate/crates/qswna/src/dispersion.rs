//! Linear stability of the uniform state at leading order in epsilon.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{ModelParams, SteadyState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DispersionInputs {
    pub d0: f64,
    pub d_prime: f64,
    pub u_star: f64,
    pub g1: f64,
    pub rho: f64,
    pub alpha0: f64,
    pub d_c: f64,
    pub beta: f64,
    pub lambda: f64,
    /// logistic growth rate r(u*), zero for the base model
    pub r_star: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DispersionCubic {
    /// [c3, c2, c1, c0], c3 = 1
    pub coeffs: [f64; 4],
    pub k: f64,
    pub inputs: DispersionInputs,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthEntry {
    pub k: f64,
    /// sorted by real part, descending
    pub roots: [Complex64; 3],
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthSpectrum {
    pub entries: Vec<GrowthEntry>,
    pub max_real_part: f64,
    pub critical_k: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KMode {
    /// k must be a multiple of pi/L
    Discrete,
    Continuous,
}

pub fn check_k(params: &ModelParams, k: f64, mode: KMode) -> Result<()> {
    if mode == KMode::Continuous {
        return Ok(());
    }
    let m = k * params.l / PI;
    if k < 0.0 || (m - m.round()).abs() > 1e-9 * m.abs().max(1.0) {
        return Err(Error::InvalidParam(format!("k = {k} is not a multiple of pi/L")));
    }
    Ok(())
}

fn inputs(params: &ModelParams, steady: &SteadyState, rho: f64, r_star: f64) -> DispersionInputs {
    let u_ref = params.u_ref(steady);
    DispersionInputs {
        d0: params.motility.eval(steady.u_star, u_ref),
        d_prime: params.motility.deriv(steady.u_star, u_ref),
        u_star: steady.u_star,
        g1: params.g(steady.c_star, 1),
        rho,
        alpha0: params.alpha0,
        d_c: params.d_c,
        beta: params.beta,
        lambda: params.lambda,
        r_star,
    }
}

fn cubic_from(inp: DispersionInputs, k: f64) -> DispersionCubic {
    let k2 = k * k;
    let kk = inp.d0 * k2;
    let e = inp.d_c * k2 + inp.beta;
    let b = kk + inp.r_star;
    let c = kk + inp.lambda;
    let g = inp.alpha0 * inp.g1 * inp.rho;
    let h = (inp.d0 - inp.u_star * inp.d_prime) * k2;
    DispersionCubic {
        coeffs: [1.0, e + b + c, e * b + e * c + b * c - g, e * b * c - g * (h + inp.r_star)],
        k,
        inputs: inp,
    }
}

pub fn build_cubic(params: &ModelParams, steady: &SteadyState, k: f64) -> DispersionCubic {
    cubic_from(inputs(params, steady, params.rho_star, 0.0), k)
}

pub fn build_cubic_checked(params: &ModelParams, steady: &SteadyState, k: f64, mode: KMode) -> Result<DispersionCubic> {
    check_k(params, k, mode)?;
    Ok(build_cubic(params, steady, k))
}

/// Cubic for logistic growth with rate r(u*) = r_star and carrying density rho_c.
pub fn logistic_dispersion(params: &ModelParams, steady: &SteadyState, k: f64, r_star: f64, rho_c: f64) -> Result<DispersionCubic> {
    if r_star < 0.0 {
        return Err(Error::InvalidParam("r_star must be non-negative".into()));
    }
    Ok(cubic_from(inputs(params, steady, rho_c, r_star), k))
}

impl DispersionCubic {
    pub fn eval(&self, s: Complex64) -> Complex64 {
        let [c3, c2, c1, c0] = self.coeffs;
        ((s * c3 + c2) * s + c1) * s + c0
    }

    fn eval_deriv(&self, s: Complex64) -> Complex64 {
        let [c3, c2, c1, _] = self.coeffs;
        (s * (3.0 * c3) + 2.0 * c2) * s + c1
    }

    /// Residual of the unexpanded relation
    /// sigma + E - G (sigma + H + r)/((sigma + K + r)(sigma + K + lambda)).
    pub fn rational_residual(&self, s: Complex64) -> Complex64 {
        let i = &self.inputs;
        let k2 = self.k * self.k;
        let kk = i.d0 * k2;
        let e = i.d_c * k2 + i.beta;
        let g = i.alpha0 * i.g1 * i.rho;
        let h = (i.d0 - i.u_star * i.d_prime) * k2;
        s + e - g * (s + h + i.r_star) / ((s + kk + i.r_star) * (s + kk + i.lambda))
    }

    /// Roots by a bracketed real root, deflation and Newton polishing; sorted by real part descending.
    pub fn roots(&self) -> [Complex64; 3] {
        let [_, c2, c1, c0] = self.coeffs;
        let p = |x: f64| ((x + c2) * x + c1) * x + c0;
        // Cauchy bound brackets every real root
        let bound = 1.0 + c2.abs().max(c1.abs()).max(c0.abs());
        let (mut a, mut b) = (-bound, bound);
        for _ in 0..400 {
            let m = 0.5 * (a + b);
            if p(a) * p(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
            if b - a < 1e-15 * bound {
                break;
            }
        }
        let r1 = 0.5 * (a + b);
        // deflate: x^2 + q1 x + q0
        let q1 = c2 + r1;
        let q0 = c1 + r1 * q1;
        let disc = Complex64::new(q1 * q1 - 4.0 * q0, 0.0).sqrt();
        let sgn = if q1 >= 0.0 { 1.0 } else { -1.0 };
        let t = -0.5 * (q1 + sgn * disc);
        let (r2, r3) = if t.norm() == 0.0 { (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)) } else { (t, q0 / t) };
        let mut rs = [Complex64::new(r1, 0.0), r2, r3];
        for r in rs.iter_mut() {
            for _ in 0..3 {
                let d = self.eval_deriv(*r);
                if d.norm() == 0.0 {
                    break;
                }
                let step = self.eval(*r) / d;
                if !step.re.is_finite() {
                    break;
                }
                *r -= step;
            }
            if r.im.abs() < 1e-14 * r.norm().max(1.0) {
                r.im = 0.0;
            }
        }
        rs.sort_by(|x, y| y.re.partial_cmp(&x.re).unwrap().then(y.im.partial_cmp(&x.im).unwrap()));
        rs
    }
}

pub fn growth_rates(params: &ModelParams, steady: &SteadyState, k: f64) -> GrowthEntry {
    GrowthEntry { k, roots: build_cubic(params, steady, k).roots() }
}

/// Growth rates over k = m pi/L for m in `modes`.
pub fn growth_spectrum(params: &ModelParams, steady: &SteadyState, ks: &[f64]) -> GrowthSpectrum {
    let entries: Vec<GrowthEntry> = ks.iter().map(|&k| growth_rates(params, steady, k)).collect();
    let (mut max_re, mut kc) = (f64::NEG_INFINITY, f64::NAN);
    for e in &entries {
        if e.roots[0].re > max_re {
            max_re = e.roots[0].re;
            kc = e.k;
        }
    }
    GrowthSpectrum { entries, max_real_part: max_re, critical_k: kc }
}

/// Leading-order critical D'(u*) at wavenumber k.
pub fn critical_dprime(params: &ModelParams, steady: &SteadyState, k: f64) -> Result<f64> {
    let g1 = params.g(steady.c_star, 1);
    if !params.uniform_mode_stable(steady) {
        return Err(Error::Precondition(format!(
            "g'(c*) = {g1} >= lambda beta/(alpha0 rho*) = {}",
            params.line_slope()
        )));
    }
    let d0 = params.d_of_u(steady.u_star, steady);
    let k2 = k * k;
    Ok(-(d0 / steady.u_star)
        * ((params.d_c * k2 + params.beta) * (d0 * k2 + params.lambda) / (params.alpha0 * params.rho_star * g1) - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_zero_is_stable() {
        let p = ModelParams::default();
        let s = p.steady().unwrap();
        let r = build_cubic(&p, &s, 0.0).roots();
        // one root is -D0 k^2 = 0 for k = 0, the others solve (s+beta)(s+lambda) = alpha0 g' rho
        let nonzero: Vec<_> = r.iter().filter(|z| z.norm() > 1e-12).collect();
        assert_eq!(nonzero.len(), 2);
        assert!(nonzero.iter().all(|z| z.re < 0.0));
    }

    #[test]
    fn discrete_k_enforced() {
        let p = ModelParams::default();
        assert!(check_k(&p, p.k1() * 2.0, KMode::Discrete).is_ok());
        assert!(check_k(&p, 0.37, KMode::Discrete).is_err());
        assert!(check_k(&p, 0.37, KMode::Continuous).is_ok());
    }
}
