//! Finite-volume discretisation on the (x, u) rectangle: residual, banded Jacobian,
//! Newton solves with a mass row, theta-method time stepping and observables.
//!
//! Unknowns are ordered x-cell by x-cell, `m = nu + 1` per cell: n(i, 0..nu) then c(i).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{dot, norm_inf, BandLu, BandMatrix, Bordered};
use crate::params::{ModelParams, SteadyState};

/// Bernoulli function P / (e^P - 1).
#[inline]
pub fn bern(p: f64) -> f64 {
    if p.abs() < 1e-6 {
        1.0 - 0.5 * p + p * p / 12.0
    } else {
        p / p.exp_m1()
    }
}

#[inline]
fn bern_d(p: f64) -> f64 {
    if p.abs() < 1e-4 {
        -0.5 + p / 6.0
    } else {
        bern(p) / p * (1.0 - bern(-p))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub nu: usize,
    /// sinh grading scale in units of sqrt(eps / lambda)
    pub grading: f64,
    /// order of the x-diffusion stencil, 2 or 4
    pub x_order: usize,
    /// smallest epsilon the u-range must accommodate (defaults to the run's epsilon)
    pub eps_min: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nx: 24, nu: 160, grading: 2.0, x_order: 4, eps_min: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Grid2D {
    pub nx: usize,
    pub nu: usize,
    pub l: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub h: f64,
    pub x: Vec<f64>,
    pub u_faces: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub x_order: usize,
}

impl Grid2D {
    pub fn new(params: &ModelParams, steady: &SteadyState, spec: &GridSpec) -> Result<Self> {
        if spec.nx < 3 || spec.nu < 8 {
            return Err(Error::InvalidParam("grid needs nx >= 3 and nu >= 8".into()));
        }
        if spec.x_order != 2 && spec.x_order != 4 {
            return Err(Error::InvalidParam("x_order must be 2 or 4".into()));
        }
        let lam = params.lambda;
        let eps_range = spec.eps_min.unwrap_or(params.epsilon).min(params.epsilon);
        let us = steady.u_star;
        let u_max = us + (12.0 * (eps_range / lam).sqrt()).max(0.5 * us);
        let w = (params.epsilon / lam).sqrt();
        let al = spec.grading * w;
        let x0 = (-us / al).asinh();
        let x1 = ((u_max - us) / al).asinh();
        let nu = spec.nu;
        let mut faces: Vec<f64> = (0..=nu).map(|k| us + al * (x0 + (x1 - x0) * k as f64 / nu as f64).sinh()).collect();
        faces[0] = 0.0;
        faces[nu] = u_max;
        let u: Vec<f64> = faces.windows(2).map(|f| 0.5 * (f[0] + f[1])).collect();
        let du: Vec<f64> = faces.windows(2).map(|f| f[1] - f[0]).collect();
        let h = params.l / spec.nx as f64;
        let x = (0..spec.nx).map(|i| (i as f64 + 0.5) * h).collect();
        Ok(Self { nx: spec.nx, nu, l: params.l, u_min: 0.0, u_max, h, x, u_faces: faces, u, du, x_order: spec.x_order })
    }

    pub fn m(&self) -> usize {
        self.nu + 1
    }

    pub fn len(&self) -> usize {
        self.nx * self.m()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.nu + 1) + j
    }

    #[inline]
    pub fn cidx(&self, i: usize) -> usize {
        i * (self.nu + 1) + self.nu
    }

    /// Stencil offsets and weights (times 1/h^2) of the x-Laplacian.
    pub fn x_stencil(&self) -> &'static [(isize, f64)] {
        const S2: [(isize, f64); 3] = [(-1, 1.0), (0, -2.0), (1, 1.0)];
        const S4: [(isize, f64); 5] = [(-2, -1.0 / 12.0), (-1, 16.0 / 12.0), (0, -30.0 / 12.0), (1, 16.0 / 12.0), (2, -1.0 / 12.0)];
        if self.x_order == 4 {
            &S4
        } else {
            &S2
        }
    }

    /// Even reflection of a ghost index back into [0, nx).
    #[inline]
    pub fn reflect(&self, k: isize) -> usize {
        let n = self.nx as isize;
        let r = if k < 0 {
            -k - 1
        } else if k >= n {
            2 * n - k - 1
        } else {
            k
        };
        r as usize
    }

    /// -(discrete Laplacian eigenvalue) of cos(mode * pi x / L).
    pub fn laplacian_symbol(&self, mode: usize) -> f64 {
        let kh = mode as f64 * PI / self.l * self.h;
        let h2 = self.h * self.h;
        if self.x_order == 4 {
            (30.0 - 32.0 * kh.cos() + 2.0 * (2.0 * kh).cos()) / (12.0 * h2)
        } else {
            (2.0 - 2.0 * kh.cos()) / h2
        }
    }

    /// Per-unknown weights w with w.z = total cell mass (zero on c entries).
    pub fn mass_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        for i in 0..self.nx {
            for j in 0..self.nu {
                w[self.idx(i, j)] = self.h * self.du[j];
            }
        }
        w
    }

    pub fn bandwidth(&self) -> usize {
        self.m() * self.x_order / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScheme {
    ImplicitEuler,
    /// theta in (0, 1]; 0.5 is Crank-Nicolson
    Theta(f64),
}

impl TimeScheme {
    pub fn theta(&self) -> f64 {
        match self {
            TimeScheme::ImplicitEuler => 1.0,
            TimeScheme::Theta(t) => *t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSolverKind {
    /// fresh banded LU every Newton iteration
    Direct,
    /// chord iterations on a reused LU, refactored when convergence stalls
    FrozenLu,
    /// BiCGSTAB preconditioned by a reused LU
    Bicgstab,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverOptions {
    pub scheme: TimeScheme,
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub linear: LinearSolverKind,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { scheme: TimeScheme::ImplicitEuler, dt: 1.0, newton_tol: 1e-10, newton_max_iter: 25, linear: LinearSolverKind::FrozenLu }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let th = self.scheme.theta();
        if !(self.dt > 0.0) || !(self.newton_tol > 0.0) || !(th > 0.0 && th <= 1.0) || self.newton_max_iter == 0 {
            return Err(Error::InvalidParam("solver options: dt, tolerances and theta must be positive".into()));
        }
        Ok(())
    }
}

/// n and c on a grid, packed in the solver ordering.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Field {
    pub nx: usize,
    pub nu: usize,
    pub z: Vec<f64>,
    pub time: f64,
}

impl Field {
    pub fn n(&self, i: usize, j: usize) -> f64 {
        self.z[i * (self.nu + 1) + j]
    }

    pub fn c(&self, i: usize) -> f64 {
        self.z[i * (self.nu + 1) + self.nu]
    }

    pub fn c_values(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.c(i)).collect()
    }

    /// x -> L - x
    pub fn reflected(&self) -> Field {
        let m = self.nu + 1;
        let mut z = vec![0.0; self.z.len()];
        for i in 0..self.nx {
            let r = self.nx - 1 - i;
            z[r * m..(r + 1) * m].copy_from_slice(&self.z[i * m..(i + 1) * m]);
        }
        Field { z, ..self.clone() }
    }

    pub fn min_n(&self) -> f64 {
        let m = self.nu + 1;
        self.z.iter().enumerate().filter(|(k, _)| k % m != self.nu).fold(f64::INFINITY, |a, (_, v)| a.min(*v))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Observables {
    pub rho: Vec<f64>,
    pub delta_rho: f64,
    /// rho extrapolated to x = 0 and x = L
    pub rho_ends: (f64, f64),
    pub u_mean: Vec<f64>,
    pub c: Vec<f64>,
    pub mass: f64,
    /// (2/L) int rho cos(pi x / L) dx
    pub mode1: f64,
}

/// Everything needed to evaluate the discrete right-hand side at one parameter value.
#[derive(Clone, Debug)]
pub struct Problem {
    pub params: ModelParams,
    pub steady: SteadyState,
    pub grid: Grid2D,
    pub d_u: Vec<f64>,
    pub dd_dprime: Vec<f64>,
    /// fixed term added to every residual row (manufactured solutions)
    pub source: Option<Vec<f64>>,
}

struct LocalBlock {
    /// dF_j/dn_{j-1}, dF_j/dn_j, dF_j/dn_{j+1}
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    /// dF_j/dc_i
    dcol: Vec<f64>,
}

impl Problem {
    pub fn new(params: &ModelParams, spec: &GridSpec) -> Result<Self> {
        params.validate()?;
        let steady = params.steady()?;
        let grid = Grid2D::new(params, &steady, spec)?;
        Ok(Self::on_grid(params, steady, grid))
    }

    pub fn on_grid(params: &ModelParams, steady: SteadyState, grid: Grid2D) -> Self {
        let ur = params.u_ref(&steady);
        let d_u = grid.u.iter().map(|&u| params.motility.eval(u, ur)).collect();
        let dd_dprime = grid.u.iter().map(|&u| params.motility.d_per_unit_dprime(u, ur)).collect();
        Self { params: params.clone(), steady, grid, d_u, dd_dprime, source: None }
    }

    /// Same grid and steady state, different D'_*.
    pub fn with_dprime(&self, d_prime: f64) -> Self {
        Self { source: self.source.clone(), ..Self::on_grid(&self.params.with_dprime(d_prime), self.steady, self.grid.clone()) }
    }

    pub fn with_source(&self, source: Vec<f64>) -> Result<Self> {
        if source.len() != self.grid.len() {
            return Err(Error::InvalidParam(format!("source has {} entries, grid has {}", source.len(), self.grid.len())));
        }
        check_finite(&source)?;
        Ok(Self { source: Some(source), ..self.clone() })
    }

    pub fn d_prime(&self) -> f64 {
        self.params.motility.d_prime_star
    }

    fn g(&self, c: f64, order: usize) -> f64 {
        self.params.production.g_unchecked(c.max(0.0), order)
    }

    /// Sampled Gaussian centred at g(c)/lambda with mass rho per x-cell.
    fn gaussian(&self, c: f64) -> Vec<f64> {
        let (lam, eps) = (self.params.lambda, self.params.epsilon);
        let uc = self.g(c, 0) / lam;
        let mut n: Vec<f64> = self.grid.u.iter().map(|&u| (-lam * (u - uc).powi(2) / (2.0 * eps)).exp()).collect();
        let mass: f64 = n.iter().zip(&self.grid.du).map(|(a, b)| a * b).sum();
        for v in &mut n {
            *v *= self.params.rho_star / mass;
        }
        n
    }

    /// Discrete uniform steady state: the sampled Gaussian is an exact zero of the u-flux,
    /// and c solves the scalar balance for the midpoint quadrature.
    pub fn uniform_state(&self) -> Result<Field> {
        let p = &self.params;
        let bal = |c: f64| {
            let n = self.gaussian(c);
            let mom: f64 = n.iter().zip(&self.grid.u).zip(&self.grid.du).map(|((n, u), d)| n * u * d).sum();
            p.beta * c - p.alpha0 * mom
        };
        let c0 = self.steady.c_star;
        let (mut a, mut b) = (0.5 * c0, 1.5 * c0);
        let (mut fa, fb) = (bal(a), bal(b));
        if fa * fb > 0.0 {
            return Err(Error::NotBracketed);
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let fm = bal(mid);
            if fm * fa <= 0.0 {
                b = mid;
            } else {
                a = mid;
                fa = fm;
            }
            if b - a < 1e-15 * c0 {
                break;
            }
        }
        let c = 0.5 * (a + b);
        let n = self.gaussian(c);
        let g = &self.grid;
        let mut z = vec![0.0; g.len()];
        for i in 0..g.nx {
            z[g.idx(i, 0)..g.idx(i, 0) + g.nu].copy_from_slice(&n);
            z[g.cidx(i)] = c;
        }
        Ok(Field { nx: g.nx, nu: g.nu, z, time: 0.0 })
    }

    /// Multiplies n by 1 + amp cos(mode pi x / L); mass is unchanged.
    pub fn perturbed(&self, f: &Field, amp: f64, mode: usize) -> Field {
        let g = &self.grid;
        let mut out = f.clone();
        for i in 0..g.nx {
            let s = 1.0 + amp * (mode as f64 * PI * g.x[i] / g.l).cos();
            for j in 0..g.nu {
                out.z[g.idx(i, j)] *= s;
            }
        }
        out
    }

    fn flux_coeffs(&self, c: f64) -> Vec<(f64, f64)> {
        let g = &self.grid;
        let (lam, eps) = (self.params.lambda, self.params.epsilon);
        let gc = self.g(c, 0);
        (0..g.nu - 1)
            .map(|f| {
                let d = g.u[f + 1] - g.u[f];
                let um = 0.5 * (g.u[f + 1] + g.u[f]);
                let pe = (gc - lam * um) * d / eps;
                (pe, eps / d)
            })
            .collect()
    }

    fn x_lap(&self, z: &[f64], i: usize, j: usize) -> f64 {
        let g = &self.grid;
        let m = g.m();
        let mut acc = 0.0;
        for &(o, w) in g.x_stencil() {
            acc += w * z[g.reflect(i as isize + o) * m + j];
        }
        acc / (g.h * g.h)
    }

    fn residual_cell(&self, z: &[f64], i: usize, out: &mut [f64]) {
        let g = &self.grid;
        let p = &self.params;
        let base = i * g.m();
        let c = z[base + g.nu];
        let coeffs = self.flux_coeffs(c);
        let mut jprev = 0.0;
        for j in 0..g.nu {
            let jnext = if j + 1 < g.nu {
                let (pe, s) = coeffs[j];
                s * (bern(pe) * z[base + j + 1] - bern(-pe) * z[base + j])
            } else {
                0.0
            };
            out[j] = (jnext - jprev) / g.du[j] + self.d_u[j] * self.x_lap(z, i, j);
            jprev = jnext;
        }
        let mom: f64 = (0..g.nu).map(|j| g.u[j] * z[base + j] * g.du[j]).sum();
        out[g.nu] = p.d_c * self.x_lap(z, i, g.nu) - p.beta * c + p.alpha0 * mom;
        if let Some(src) = &self.source {
            for (o, v) in out.iter_mut().zip(&src[base..base + g.m()]) {
                *o += v;
            }
        }
    }

    /// Discrete dz/dt.
    pub fn residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; z.len()];
        exec::fill_chunks(&mut out, self.grid.m(), |i, chunk| self.residual_cell(z, i, chunk));
        check_finite(&out)?;
        Ok(out)
    }

    pub fn residual_seq(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; z.len()];
        exec::fill_chunks_seq(&mut out, self.grid.m(), |i, chunk| self.residual_cell(z, i, chunk));
        check_finite(&out)?;
        Ok(out)
    }

    pub fn residual_field(&self, f: &Field) -> Result<Vec<f64>> {
        check_finite(&f.z)?;
        self.residual(&f.z)
    }

    /// dF/dD'_* at fixed z.
    pub fn residual_dprime(&self, z: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; z.len()];
        for i in 0..g.nx {
            for j in 0..g.nu {
                out[g.idx(i, j)] = self.dd_dprime[j] * self.x_lap(z, i, j);
            }
        }
        out
    }

    fn local_block(&self, z: &[f64], i: usize) -> LocalBlock {
        let g = &self.grid;
        let nu = g.nu;
        let base = i * g.m();
        let c = z[base + nu];
        let g1 = self.g(c, 1);
        let coeffs = self.flux_coeffs(c);
        let mut lb = LocalBlock { lower: vec![0.0; nu], diag: vec![0.0; nu], upper: vec![0.0; nu], dcol: vec![0.0; nu] };
        for (f, &(pe, s)) in coeffs.iter().enumerate() {
            let (bp, bm) = (bern(pe), bern(-pe));
            // J_f = s (bp n_{f+1} - bm n_f) enters +J/du_f and -J/du_{f+1}
            let dj_dc = s * (bern_d(pe) * z[base + f + 1] + bern_d(-pe) * z[base + f]) * g1 * (g.u[f + 1] - g.u[f]) / self.params.epsilon;
            lb.upper[f] += s * bp / g.du[f];
            lb.diag[f] -= s * bm / g.du[f];
            lb.dcol[f] += dj_dc / g.du[f];
            lb.diag[f + 1] -= s * bp / g.du[f + 1];
            lb.lower[f + 1] += s * bm / g.du[f + 1];
            lb.dcol[f + 1] -= dj_dc / g.du[f + 1];
        }
        lb
    }

    /// Banded Jacobian of [`Problem::residual`].
    pub fn jacobian(&self, z: &[f64]) -> BandMatrix {
        let blocks = exec::map(&(0..self.grid.nx).collect::<Vec<_>>(), |&i| self.local_block(z, i));
        self.scatter(blocks, 0.0, 1.0)
    }

    pub fn jacobian_seq(&self, z: &[f64]) -> BandMatrix {
        let blocks = exec::map_seq(&(0..self.grid.nx).collect::<Vec<_>>(), |&i| self.local_block(z, i));
        self.scatter(blocks, 0.0, 1.0)
    }

    /// shift I + scale J
    fn scatter(&self, blocks: Vec<LocalBlock>, shift: f64, scale: f64) -> BandMatrix {
        let g = &self.grid;
        let p = &self.params;
        let (nu, m) = (g.nu, g.m());
        let bw = g.bandwidth();
        let mut a = BandMatrix::zeros(g.len(), bw, bw);
        let h2 = g.h * g.h;
        for (i, lb) in blocks.iter().enumerate() {
            let base = i * m;
            for j in 0..nu {
                let r = base + j;
                a.add(r, r, shift + scale * lb.diag[j]);
                if j > 0 {
                    a.add(r, r - 1, scale * lb.lower[j]);
                }
                if j + 1 < nu {
                    a.add(r, r + 1, scale * lb.upper[j]);
                }
                a.add(r, base + nu, scale * lb.dcol[j]);
                for &(o, w) in g.x_stencil() {
                    let col = g.reflect(i as isize + o) * m + j;
                    a.add(r, col, scale * self.d_u[j] * w / h2);
                }
            }
            let r = base + nu;
            a.add(r, r, shift - scale * p.beta);
            for j in 0..nu {
                a.add(r, base + j, scale * p.alpha0 * g.u[j] * g.du[j]);
            }
            for &(o, w) in g.x_stencil() {
                let col = g.reflect(i as isize + o) * m + nu;
                a.add(r, col, scale * p.d_c * w / h2);
            }
        }
        a
    }

    /// I - dt theta J, the Newton matrix of one theta-method step.
    pub fn step_matrix(&self, z: &[f64], dt_theta: f64) -> BandMatrix {
        let blocks = exec::map(&(0..self.grid.nx).collect::<Vec<_>>(), |&i| self.local_block(z, i));
        self.scatter(blocks, 1.0, -dt_theta)
    }

    /// Dense Jacobian restricted to the cos(mode pi x/L) sector at an x-uniform state.
    pub fn sector_matrix(&self, uniform: &Field, mode: usize) -> nalgebra::DMatrix<f64> {
        let g = &self.grid;
        let p = &self.params;
        let nu = g.nu;
        let lb = self.local_block(&uniform.z, 0);
        let ks = g.laplacian_symbol(mode);
        let mut a = nalgebra::DMatrix::zeros(nu + 1, nu + 1);
        for j in 0..nu {
            a[(j, j)] = lb.diag[j] - ks * self.d_u[j];
            if j > 0 {
                a[(j, j - 1)] = lb.lower[j];
            }
            if j + 1 < nu {
                a[(j, j + 1)] = lb.upper[j];
            }
            a[(j, nu)] = lb.dcol[j];
            a[(nu, j)] = p.alpha0 * g.u[j] * g.du[j];
        }
        a[(nu, nu)] = -p.beta - ks * p.d_c;
        a
    }

    pub fn mass(&self, f: &Field) -> f64 {
        dot(&self.grid.mass_weights(), &f.z)
    }

    pub fn observables(&self, f: &Field) -> Observables {
        let g = &self.grid;
        let rho: Vec<f64> = (0..g.nx).map(|i| (0..g.nu).map(|j| f.n(i, j) * g.du[j]).sum()).collect();
        let u_mean = (0..g.nx)
            .map(|i| (0..g.nu).map(|j| g.u[j] * f.n(i, j) * g.du[j]).sum::<f64>() / rho[i])
            .collect();
        let ends = (end_value(&rho), end_value(&rho.iter().rev().copied().collect::<Vec<_>>()));
        let mass = rho.iter().sum::<f64>() * g.h;
        let mode1 = 2.0 / g.l * rho.iter().zip(&g.x).map(|(r, x)| r * (PI * x / g.l).cos()).sum::<f64>() * g.h;
        Observables { delta_rho: (ends.1 - ends.0).abs(), rho, rho_ends: ends, u_mean, c: f.c_values(), mass, mode1 }
    }
}

/// Value at the wall from the first three cell averages, assuming an even profile.
fn end_value(v: &[f64]) -> f64 {
    if v.len() < 3 {
        return v[0];
    }
    1.171875 * v[0] - 0.1953125 * v[1] + 0.0234375 * v[2]
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain("non-finite value in field or residual".into()))
    }
}

/// Linear constraint `row . z + dp * p = value`.
#[derive(Clone, Debug)]
pub struct Constraint {
    pub row: Vec<f64>,
    pub dp: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub field: Field,
    pub d_prime: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Newton on F(z, p) = 0 with the total mass fixed at rho* L.
///
/// With `constraint = None` the parameter is held fixed. Otherwise D'_* is an unknown
/// and the extra linear row closes the system.
pub fn newton_solve(problem: &Problem, guess: &Field, constraint: Option<&Constraint>, opts: &SolverOptions) -> Result<NewtonOutcome> {
    let mut pr = problem.clone();
    let g = &problem.grid;
    let w = g.mass_weights();
    let target = problem.params.rho_star * g.l;
    let mut z = guess.z.clone();
    let mut p = problem.d_prime();
    let scale = 1.0 + norm_inf(&z);
    let mut last = f64::INFINITY;
    for it in 0..=opts.newton_max_iter {
        let f = pr.residual(&z)?;
        let r_row = mass_row(g, &z);
        let mut res = f.iter().enumerate().filter(|(k, _)| *k != r_row).fold(0.0f64, |a, (_, v)| a.max(v.abs()));
        res = res.max((dot(&w, &z) - target).abs());
        if let Some(cn) = constraint {
            res = res.max((dot(&cn.row, &z) + cn.dp * p - cn.value).abs());
        }
        last = res;
        if res <= opts.newton_tol * scale {
            return Ok(NewtonOutcome { field: Field { z, ..guess.clone() }, d_prime: p, iterations: it, residual: res });
        }
        if it == opts.newton_max_iter {
            break;
        }
        let mut a = pr.jacobian(&z);
        a.clear_row(r_row);
        a.set(r_row, r_row, 1.0);
        let lu = a.factor()?;
        let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        rhs[r_row] = target - dot(&w, &z);
        let mut c_cols = vec![unit(g.len(), r_row)];
        let mut mrow = w.clone();
        mrow[r_row] -= 1.0;
        let mut r_rows = vec![mrow];
        let mut gvec = vec![0.0];
        let d = if let Some(cn) = constraint {
            let mut fp = pr.residual_dprime(&z);
            fp[r_row] = 0.0;
            c_cols.push(fp);
            r_rows.push(cn.row.clone());
            gvec.push(cn.value - dot(&cn.row, &z) - cn.dp * p);
            nalgebra::DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, cn.dp])
        } else {
            nalgebra::DMatrix::from_element(1, 1, -1.0)
        };
        let bs = Bordered::new(lu, c_cols, r_rows, d)?;
        let (dz, extra) = bs.solve(&rhs, &gvec);
        // damp steps that would push n far negative
        let mut lam = 1.0;
        let m = g.m();
        for (k, (zk, dk)) in z.iter().zip(&dz).enumerate() {
            if k % m != g.nu && *dk < 0.0 && zk + dk < -0.5 * zk.abs() - 1e-3 {
                lam = f64::min(lam, 0.9 * (zk.abs() + 1e-3) / -dk);
            }
        }
        for (zk, dk) in z.iter_mut().zip(&dz) {
            *zk += lam * dk;
        }
        if constraint.is_some() {
            p += lam * extra[1];
            pr = pr.with_dprime(p);
        }
    }
    Err(Error::NewtonFailed { iters: opts.newton_max_iter, residual: last })
}

/// Steady state at fixed parameters.
pub fn newton_steady(problem: &Problem, guess: &Field, opts: &SolverOptions) -> Result<NewtonOutcome> {
    newton_solve(problem, guess, None, opts)
}

/// The n-row replaced by the mass condition: the peak of the first x-cell.
fn mass_row(g: &Grid2D, z: &[f64]) -> usize {
    let (mut best, mut bj) = (f64::NEG_INFINITY, 0);
    for j in 0..g.nu {
        if z[g.idx(0, j)] > best {
            best = z[g.idx(0, j)];
            bj = j;
        }
    }
    g.idx(0, bj)
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StepStats {
    pub steps: usize,
    pub factorizations: usize,
    pub newton_iterations: usize,
}

/// Theta-method integrator that keeps its LU factors across steps.
pub struct Stepper {
    pub problem: Problem,
    pub opts: SolverOptions,
    lu: Option<BandLu>,
    pub stats: StepStats,
}

impl Stepper {
    pub fn new(problem: Problem, opts: SolverOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self { problem, opts, lu: None, stats: StepStats::default() })
    }

    fn refactor(&mut self, z: &[f64]) -> Result<()> {
        let th = self.opts.scheme.theta();
        self.lu = Some(self.problem.step_matrix(z, self.opts.dt * th).factor()?);
        self.stats.factorizations += 1;
        Ok(())
    }

    fn linear_solve(&self, rhs: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let lu = self.lu.as_ref().expect("factorised");
        if self.opts.linear != LinearSolverKind::Bicgstab {
            return Ok(lu.solve(rhs));
        }
        let th = self.opts.scheme.theta() * self.opts.dt;
        let jac = self.problem.jacobian(z);
        let op = |v: &[f64]| -> Vec<f64> {
            let jv = jac.matvec(v);
            v.iter().zip(&jv).map(|(a, b)| a - th * b).collect()
        };
        bicgstab(op, |v| lu.solve(v), rhs, 1e-13, 200)
    }

    /// One step of size opts.dt.
    pub fn step(&mut self, f: &Field) -> Result<Field> {
        let dt = self.opts.dt;
        let th = self.opts.scheme.theta();
        let z0 = &f.z;
        let explicit = if th < 1.0 { Some(self.problem.residual(z0)?) } else { None };
        let gfun = |pr: &Problem, z: &[f64]| -> Result<Vec<f64>> {
            let r = pr.residual(z)?;
            Ok((0..z.len())
                .map(|k| z[k] - z0[k] - dt * th * r[k] - explicit.as_ref().map_or(0.0, |e| dt * (1.0 - th) * e[k]))
                .collect())
        };
        let scale = 1.0 + norm_inf(z0);
        let mut z = z0.clone();
        let mut fresh = false;
        if self.lu.is_none() || self.opts.linear == LinearSolverKind::Direct {
            self.refactor(&z)?;
            fresh = true;
        }
        let mut prev = f64::INFINITY;
        let mut it = 0;
        loop {
            let gz = gfun(&self.problem, &z)?;
            let res = norm_inf(&gz);
            if res <= self.opts.newton_tol * scale {
                break;
            }
            let stalled = res > 0.3 * prev;
            if it >= self.opts.newton_max_iter || (stalled && fresh && it > 2) {
                return Err(Error::NewtonFailed { iters: it, residual: res });
            }
            if (stalled && !fresh) || self.opts.linear == LinearSolverKind::Direct && it > 0 {
                self.refactor(&z)?;
                fresh = true;
            }
            let rhs: Vec<f64> = gz.iter().map(|v| -v).collect();
            let dz = self.linear_solve(&rhs, &z)?;
            for (a, b) in z.iter_mut().zip(&dz) {
                *a += b;
            }
            prev = res;
            it += 1;
            self.stats.newton_iterations += 1;
        }
        self.stats.steps += 1;
        Ok(Field { z, time: f.time + dt, ..f.clone() })
    }

    /// Repeats `step` n times, calling `observe` after each.
    pub fn run(&mut self, f: &Field, n: usize, mut observe: impl FnMut(&Field)) -> Result<Field> {
        let mut cur = f.clone();
        for _ in 0..n {
            cur = self.step(&cur)?;
            observe(&cur);
        }
        Ok(cur)
    }
}

/// Preconditioned BiCGSTAB for `op(x) = b`.
pub fn bicgstab(op: impl Fn(&[f64]) -> Vec<f64>, prec: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let bn = crate::linalg::norm2(b).max(1e-300);
    let mut x = prec(b);
    let ax = op(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..max_iter {
        if crate::linalg::norm2(&r) <= tol * bn {
            return Ok(x);
        }
        let rho1 = dot(&r0, &r);
        if rho1 == 0.0 {
            break;
        }
        let beta = rho1 / rho * alpha / omega;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        let ph = prec(&p);
        v = op(&ph);
        alpha = rho1 / dot(&r0, &v);
        let s: Vec<f64> = (0..n).map(|k| r[k] - alpha * v[k]).collect();
        let sh = prec(&s);
        let t = op(&sh);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for k in 0..n {
            x[k] += alpha * ph[k] + omega * sh[k];
            r[k] = s[k] - omega * t[k];
        }
        rho = rho1;
        if omega == 0.0 {
            break;
        }
    }
    if crate::linalg::norm2(&r) <= 1e3 * tol * bn {
        Ok(x)
    } else {
        Err(Error::LinearSolve("BiCGSTAB did not converge".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Problem {
        Problem::new(&ModelParams::default().with_epsilon(0.01), &GridSpec { nx: 8, nu: 60, ..Default::default() }).unwrap()
    }

    #[test]
    fn uniform_state_is_discrete_fixed_point() {
        let pr = small();
        let f = pr.uniform_state().unwrap();
        let r = pr.residual(&f.z).unwrap();
        assert!(norm_inf(&r) < 1e-11, "{}", norm_inf(&r));
        assert!((pr.mass(&f) - pr.params.rho_star * pr.params.l).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let pr = small();
        let f = pr.perturbed(&pr.uniform_state().unwrap(), 0.1, 1);
        let mut z = f.z.clone();
        for (k, v) in z.iter_mut().enumerate() {
            *v *= 1.0 + 0.01 * ((k as f64) * 0.7).sin();
        }
        let jac = pr.jacobian(&z).to_dense();
        let f0 = pr.residual(&z).unwrap();
        for &col in &[3usize, 40, 60, 61 + 30, 61 * 3 + 60, 61 * 7 + 5] {
            let hstep = 1e-6 * (1.0 + z[col].abs());
            let mut zp = z.clone();
            zp[col] += hstep;
            let fp = pr.residual(&zp).unwrap();
            for row in 0..z.len() {
                let fd = (fp[row] - f0[row]) / hstep;
                assert!((fd - jac[(row, col)]).abs() < 1e-4 * (1.0 + fd.abs()), "({row},{col}) {fd} {}", jac[(row, col)]);
            }
        }
    }

    #[test]
    fn mass_weights_annihilate_residual() {
        let pr = small();
        let f = pr.perturbed(&pr.uniform_state().unwrap(), 0.2, 2);
        let r = pr.residual(&f.z).unwrap();
        let w = pr.grid.mass_weights();
        assert!(dot(&w, &r).abs() < 1e-12);
    }

    #[test]
    fn laplacian_symbol_matches_stencil() {
        let pr = small();
        let g = &pr.grid;
        let v: Vec<f64> = g.x.iter().map(|x| (PI * x / g.l).cos()).collect();
        let ks = g.laplacian_symbol(1);
        for i in 0..g.nx {
            let mut acc = 0.0;
            for &(o, w) in g.x_stencil() {
                acc += w * v[g.reflect(i as isize + o)];
            }
            assert!((acc / (g.h * g.h) + ks * v[i]).abs() < 1e-12);
        }
    }
}
