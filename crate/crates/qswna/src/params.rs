//! Model parameters, the motility and production functions, and the uniform steady state.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotilitySpec {
    #[serde(rename = "D_star")]
    pub d_star: f64,
    #[serde(rename = "D_inf")]
    pub d_inf: f64,
    #[serde(rename = "D_prime_star")]
    pub d_prime_star: f64,
    /// Centre of the tanh profile. `None` means the steady-state u* of branch 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_star_ref: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductionSpec {
    pub a: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "K")]
    pub k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "D_c")]
    pub d_c: f64,
    pub beta: f64,
    pub alpha0: f64,
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub rho_star: f64,
    pub motility: MotilitySpec,
    pub production: ProductionSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub c_star: f64,
    pub u_star: f64,
    #[serde(rename = "N")]
    pub n_prefactor: f64,
    pub branch_index: usize,
}

impl ProductionSpec {
    /// k-th derivative of g(c) = a + Vc/(K+c).
    pub fn g(&self, c: f64, order: usize) -> Result<f64> {
        if c < 0.0 {
            return Err(Error::Domain(format!("g evaluated at negative c = {c}")));
        }
        Ok(self.g_unchecked(c, order))
    }

    pub(crate) fn g_unchecked(&self, c: f64, order: usize) -> f64 {
        let s = self.k + c;
        match order {
            0 => self.a + self.v * c / s,
            _ => {
                // d^n/dc^n [V c/(K+c)] = V K (-1)^(n+1) n! / (K+c)^(n+1)
                let mut fact = 1.0;
                for i in 2..=order {
                    fact *= i as f64;
                }
                let sign = if order % 2 == 1 { 1.0 } else { -1.0 };
                sign * self.v * self.k * fact / s.powi(order as i32 + 1)
            }
        }
    }
}

/// Taylor coefficients t_n of tanh(z) = sum t_n z^n.
pub fn tanh_taylor(n_max: usize) -> Vec<f64> {
    let mut t = vec![0.0; n_max + 1];
    for n in 0..n_max {
        let s: f64 = (0..=n).map(|i| t[i] * t[n - i]).sum();
        let delta = if n == 0 { 1.0 } else { 0.0 };
        t[n + 1] = (delta - s) / (n as f64 + 1.0);
    }
    t
}

impl MotilitySpec {
    fn delta(&self) -> f64 {
        self.d_star - self.d_inf
    }

    /// Slope of the tanh argument, w(u) = rate * (u - u_ref).
    fn rate(&self) -> f64 {
        let d = self.delta();
        if d == 0.0 {
            0.0
        } else {
            -self.d_prime_star / d
        }
    }

    pub fn eval(&self, u: f64, u_ref: f64) -> f64 {
        let d = self.delta();
        if d == 0.0 {
            return self.d_star;
        }
        self.d_star - d * (self.rate() * (u - u_ref)).tanh()
    }

    pub fn deriv(&self, u: f64, u_ref: f64) -> f64 {
        let d = self.delta();
        if d == 0.0 {
            return 0.0;
        }
        let w = self.rate() * (u - u_ref);
        let sech = 1.0 / w.cosh();
        -d * self.rate() * sech * sech
    }

    /// Rate of change of D(u) with respect to D_prime_star at fixed D_star, D_inf.
    pub fn d_per_unit_dprime(&self, u: f64, u_ref: f64) -> f64 {
        let d = self.delta();
        let s = u - u_ref;
        if d == 0.0 {
            return s;
        }
        let w = self.rate() * s;
        let sech = 1.0 / w.cosh();
        s * sech * sech
    }

    /// Normalised Taylor coefficients D^(m)(u_ref)/m!, m = 0..=m_max.
    pub fn taylor_normalized(&self, m_max: usize) -> Vec<f64> {
        let t = tanh_taylor(m_max);
        let d = self.delta();
        let r = self.rate();
        let mut out = Vec::with_capacity(m_max + 1);
        out.push(self.d_star);
        let mut rp = 1.0;
        for tm in t.iter().skip(1) {
            rp *= r;
            out.push(if d == 0.0 { 0.0 } else { -d * rp * tm });
        }
        out
    }

    /// Derivatives D^(m)(u_ref), m = 0..=m_max.
    pub fn taylor(&self, m_max: usize) -> Vec<f64> {
        let mut fact = 1.0;
        self.taylor_normalized(m_max)
            .into_iter()
            .enumerate()
            .map(|(m, c)| {
                if m > 0 {
                    fact *= m as f64;
                }
                c * fact
            })
            .collect()
    }

    pub fn with_dprime(&self, d_prime_star: f64) -> Self {
        MotilitySpec { d_prime_star, ..self.clone() }
    }
}

pub fn motility_taylor(spec: &MotilitySpec, m_max: usize) -> Vec<f64> {
    spec.taylor(m_max)
}

pub fn derivatives_of_g(spec: &ProductionSpec, c: f64, order: usize) -> Result<f64> {
    spec.g(c, order)
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            d_c: 1.0,
            beta: 1.0,
            alpha0: 0.5,
            lambda: 1.0,
            epsilon: 0.005,
            l: 6.0,
            rho_star: 0.65,
            motility: MotilitySpec { d_star: 1.0, d_inf: 0.2, d_prime_star: -1.5, u_star_ref: None },
            production: ProductionSpec { a: 0.5, v: 4.0, k: 0.5 },
        }
    }
}

impl ModelParams {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: ModelParams = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: ModelParams = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(1.0)
    }

    /// `eps_factor` sets the sanity bound epsilon < eps_factor * lambda * L.
    pub fn validate_with(&self, eps_factor: f64) -> Result<()> {
        let pos = [
            ("D_c", self.d_c),
            ("beta", self.beta),
            ("alpha0", self.alpha0),
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
            ("L", self.l),
            ("rho_star", self.rho_star),
            ("D_star", self.motility.d_star),
            ("a", self.production.a),
            ("K", self.production.k),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.production.v >= 0.0) {
            return Err(Error::InvalidParam("V must be non-negative".into()));
        }
        if !(self.motility.d_inf > 0.0) {
            return Err(Error::InvalidParam("D_inf must be positive".into()));
        }
        if !self.motility.d_prime_star.is_finite() {
            return Err(Error::InvalidParam("D_prime_star must be finite".into()));
        }
        if self.motility.d_star == self.motility.d_inf && self.motility.d_prime_star != 0.0 {
            return Err(Error::InvalidParam("D_star == D_inf forces D_prime_star = 0".into()));
        }
        if self.epsilon >= eps_factor * self.lambda * self.l {
            return Err(Error::InvalidParam("epsilon is not small against lambda*L".into()));
        }
        // tanh keeps D between D_inf and 2 D_star - D_inf
        if 2.0 * self.motility.d_star - self.motility.d_inf <= 0.0 {
            return Err(Error::InvalidParam("D(u) changes sign".into()));
        }
        Ok(())
    }

    pub fn g(&self, c: f64, order: usize) -> f64 {
        self.production.g_unchecked(c, order)
    }

    /// Slope of the steady-state line g(c) = m c.
    pub fn line_slope(&self) -> f64 {
        self.lambda * self.beta / (self.alpha0 * self.rho_star)
    }

    pub fn c_max(&self) -> f64 {
        10.0 * (self.production.a + self.production.v) * self.alpha0 * self.rho_star
            / (self.lambda * self.beta)
    }

    pub fn steady_states(&self) -> Result<Vec<SteadyState>> {
        solve_steady_state(self)
    }

    pub fn steady(&self) -> Result<SteadyState> {
        Ok(self.steady_states()?[0])
    }

    /// u* used as the centre of D(u).
    pub fn u_ref(&self, steady: &SteadyState) -> f64 {
        self.motility.u_star_ref.unwrap_or(steady.u_star)
    }

    pub fn d_of_u(&self, u: f64, steady: &SteadyState) -> f64 {
        self.motility.eval(u, self.u_ref(steady))
    }

    /// g'(c*) < lambda beta / (alpha0 rho*): the uniform mode is stable.
    pub fn uniform_mode_stable(&self, steady: &SteadyState) -> bool {
        self.g(steady.c_star, 1) < self.line_slope()
    }

    pub fn with_dprime(&self, d: f64) -> Self {
        ModelParams { motility: self.motility.with_dprime(d), ..self.clone() }
    }

    pub fn with_epsilon(&self, eps: f64) -> Self {
        ModelParams { epsilon: eps, ..self.clone() }
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        ModelParams { rho_star: rho, ..self.clone() }
    }

    pub fn k1(&self) -> f64 {
        PI / self.l
    }
}

/// All positive roots of g(c) = lambda beta c / (alpha0 rho*) in [0, c_max], ascending.
pub fn solve_steady_state(p: &ModelParams) -> Result<Vec<SteadyState>> {
    let m = p.line_slope();
    let f = |c: f64| p.g(c, 0) - m * c;
    let df = |c: f64| p.g(c, 1) - m;
    let c_max = p.c_max();
    let n_scan = 4096;
    let mut roots = Vec::new();
    let mut c0 = 0.0;
    let mut f0 = f(c0);
    for i in 1..=n_scan {
        let c1 = c_max * i as f64 / n_scan as f64;
        let f1 = f(c1);
        if f1 == 0.0 {
            roots.push(c1);
        } else if f0 * f1 < 0.0 {
            roots.push(refine_root(&f, &df, c0, c1));
        }
        c0 = c1;
        f0 = f1;
    }
    roots.retain(|&c| c > 0.0);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * b.abs().max(1.0));
    if roots.is_empty() {
        return Err(Error::NoSteadyState { c_max });
    }
    let norm = p.rho_star * (p.lambda / (2.0 * PI * p.epsilon)).sqrt();
    Ok(roots
        .into_iter()
        .enumerate()
        .map(|(i, c)| SteadyState { c_star: c, u_star: p.g(c, 0) / p.lambda, n_prefactor: norm, branch_index: i })
        .collect())
}

fn refine_root(f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
        if (b - a) <= 1e-15 * b.abs().max(1.0) {
            break;
        }
    }
    let mut c = 0.5 * (a + b);
    for _ in 0..3 {
        let d = df(c);
        if d == 0.0 {
            break;
        }
        let next = c - f(c) / d;
        if next.is_finite() && next >= a - (b - a) && next <= b + (b - a) {
            c = next;
        }
    }
    c
}
