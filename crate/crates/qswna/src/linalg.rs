//! Banded LU through LAPACK, plus bordered block elimination on top of it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Square banded matrix in LAPACK `dgbtrf` layout (room for the fill-in rows).
#[derive(Clone, Debug)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self { n, kl, ku, ldab, ab: vec![0.0; ldab * n] }
    }

    #[inline]
    fn pos(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.ku >= j && j + self.kl >= i, "({i},{j}) outside band");
        j * self.ldab + self.kl + self.ku + i - j
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.pos(i, j);
        self.ab[p] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let p = self.pos(i, j);
        self.ab[p] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.pos(i, j)]
        } else {
            0.0
        }
    }

    /// Zeroes row i inside the band.
    pub fn clear_row(&mut self, i: usize) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            self.set(i, j, 0.0);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.ab[j * self.ldab + self.kl + self.ku + i - j] * xj;
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn factor(self) -> Result<BandLu> {
        BandLu::new(self)
    }
}

/// LU factors of a [`BandMatrix`], together with the original for refinement.
#[derive(Clone, Debug)]
pub struct BandLu {
    orig: BandMatrix,
    lu: Vec<f64>,
    ipiv: Vec<i32>,
}

impl BandLu {
    pub fn new(a: BandMatrix) -> Result<Self> {
        let mut lu = a.ab.clone();
        let mut ipiv = vec![0i32; a.n];
        let mut info = 0i32;
        let (n, kl, ku, ldab) = (a.n as i32, a.kl as i32, a.ku as i32, a.ldab as i32);
        unsafe {
            lapack_sys::dgbtrf_(&n, &n, &kl, &ku, lu.as_mut_ptr(), &ldab, ipiv.as_mut_ptr(), &mut info);
        }
        if info != 0 {
            return Err(Error::LinearSolve(format!("dgbtrf info = {info}")));
        }
        Ok(Self { orig: a, lu, ipiv })
    }

    pub fn n(&self) -> usize {
        self.orig.n
    }

    pub fn matrix(&self) -> &BandMatrix {
        &self.orig
    }

    fn raw_solve(&self, b: &mut [f64]) {
        let a = &self.orig;
        let (n, kl, ku, ldab) = (a.n as i32, a.kl as i32, a.ku as i32, a.ldab as i32);
        let mut info = 0i32;
        unsafe {
            lapack_sys::dgbtrs_(
                b"N".as_ptr() as *const _,
                &n,
                &kl,
                &ku,
                &1,
                self.lu.as_ptr(),
                &ldab,
                self.ipiv.as_ptr(),
                b.as_mut_ptr(),
                &n,
                &mut info,
            );
        }
    }

    /// Solve with one step of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.raw_solve(&mut x);
        let ax = self.orig.matvec(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        self.raw_solve(&mut r);
        for (x, r) in x.iter_mut().zip(&r) {
            *x += r;
        }
        x
    }
}

/// `[A C; R^T D]` with `A` banded and `p` dense border columns/rows.
#[derive(Clone, Debug)]
pub struct Bordered {
    pub a: BandLu,
    pub c: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub d: DMatrix<f64>,
    ac: Vec<Vec<f64>>,
    schur: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Bordered {
    pub fn new(a: BandLu, c: Vec<Vec<f64>>, r: Vec<Vec<f64>>, d: DMatrix<f64>) -> Result<Self> {
        let p = c.len();
        if r.len() != p || d.nrows() != p || d.ncols() != p {
            return Err(Error::LinearSolve("border shape mismatch".into()));
        }
        let ac: Vec<Vec<f64>> = c.iter().map(|ci| a.solve(ci)).collect();
        let mut s = d.clone();
        for i in 0..p {
            for j in 0..p {
                s[(i, j)] -= dot(&r[i], &ac[j]);
            }
        }
        let schur = s.lu();
        if p > 0 && !schur.is_invertible() {
            return Err(Error::LinearSolve("singular border Schur complement".into()));
        }
        Ok(Self { a, c, r, d, ac, schur })
    }

    pub fn border(&self) -> usize {
        self.c.len()
    }

    fn apply(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut top = self.a.matrix().matvec(x);
        for (k, ck) in self.c.iter().enumerate() {
            for (t, c) in top.iter_mut().zip(ck) {
                *t += c * y[k];
            }
        }
        let bot: Vec<f64> = (0..self.border())
            .map(|i| dot(&self.r[i], x) + (0..self.border()).map(|j| self.d[(i, j)] * y[j]).sum::<f64>())
            .collect();
        (top, bot)
    }

    fn solve_once(&self, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x0 = self.a.solve(f);
        let p = self.border();
        if p == 0 {
            return (x0, vec![]);
        }
        let rhs = DVector::from_iterator(p, (0..p).map(|i| g[i] - dot(&self.r[i], &x0)));
        let y = self.schur.solve(&rhs).unwrap_or_else(|| DVector::zeros(p));
        let mut x = x0;
        for (k, ak) in self.ac.iter().enumerate() {
            for (xi, a) in x.iter_mut().zip(ak) {
                *xi -= a * y[k];
            }
        }
        (x, y.iter().copied().collect())
    }

    /// Block elimination followed by one refinement sweep on the full bordered system.
    pub fn solve(&self, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut x, mut y) = self.solve_once(f, g);
        let (t, b) = self.apply(&x, &y);
        let rf: Vec<f64> = f.iter().zip(&t).map(|(a, b)| a - b).collect();
        let rg: Vec<f64> = g.iter().zip(&b).map(|(a, b)| a - b).collect();
        let (dx, dy) = self.solve_once(&rf, &rg);
        for (a, b) in x.iter_mut().zip(&dx) {
            *a += b;
        }
        for (a, b) in y.iter_mut().zip(&dy) {
            *a += b;
        }
        (x, y)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}
