//! Thin extended-precision layer over `astro-float`, plus a scalar trait shared with `f64`
//! so the late-term recursions can run in either arithmetic.

use astro_float::{BigFloat, Consts, RoundingMode, Sign};
use num_complex::Complex64;
use std::cell::RefCell;
use std::fmt;

const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("astro-float constants cache"));
}

fn with_cc<R>(f: impl FnOnce(&mut Consts) -> R) -> R {
    CONSTS.with(|c| f(&mut c.borrow_mut()))
}

/// Real scalar used by the generic recursions.
pub trait Real: Clone + fmt::Debug + Send + Sync {
    /// A constant carrying the precision of `self`.
    fn lift(&self, x: f64) -> Self;
    fn plus(&self, o: &Self) -> Self;
    fn minus(&self, o: &Self) -> Self;
    fn times(&self, o: &Self) -> Self;
    fn over(&self, o: &Self) -> Self;
    fn negated(&self) -> Self;
    fn scaled(&self, x: f64) -> Self {
        self.times(&self.lift(x))
    }
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn is_zero(&self) -> bool;
    fn is_finite(&self) -> bool;
    /// (m, e) with x = m 2^e and 0.5 <= |m| < 1; (0, 0) for zero.
    fn frexp(&self) -> (f64, i64);
    fn to_f64(&self) -> f64 {
        let (m, e) = self.frexp();
        if e > 1100 {
            return m.signum() * f64::INFINITY;
        }
        if e < -1100 {
            return 0.0;
        }
        m * 2f64.powi(e as i32)
    }
}

impl Real for f64 {
    fn lift(&self, x: f64) -> Self {
        x
    }
    fn plus(&self, o: &Self) -> Self {
        self + o
    }
    fn minus(&self, o: &Self) -> Self {
        self - o
    }
    fn times(&self, o: &Self) -> Self {
        self * o
    }
    fn over(&self, o: &Self) -> Self {
        self / o
    }
    fn negated(&self) -> Self {
        -self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn frexp(&self) -> (f64, i64) {
        if *self == 0.0 || !f64::is_finite(*self) {
            return (*self, 0);
        }
        let e = self.abs().log2().floor() as i64 + 1;
        let mut m = self / 2f64.powi(e as i32);
        let mut e = e;
        // log2 rounding at exact powers of two
        if m.abs() >= 1.0 {
            m /= 2.0;
            e += 1;
        } else if m.abs() < 0.5 {
            m *= 2.0;
            e -= 1;
        }
        (m, e)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

/// Software float with a fixed mantissa length in bits.
#[derive(Clone)]
pub struct Mp {
    v: BigFloat,
    p: usize,
}

impl fmt::Debug for Mp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (m, e) = self.frexp();
        write!(f, "{m}*2^{e}")
    }
}

impl Mp {
    pub fn from_f64(x: f64, bits: usize) -> Self {
        Mp { v: BigFloat::from_f64(x, bits), p: bits }
    }

    pub fn zero(bits: usize) -> Self {
        Self::from_f64(0.0, bits)
    }

    pub fn bits(&self) -> usize {
        self.p
    }

    pub fn pi(bits: usize) -> Self {
        Mp { v: with_cc(|cc| cc.pi(bits, RM)), p: bits }
    }

    pub fn abs(&self) -> Self {
        Mp { v: self.v.abs(), p: self.p }
    }

    pub fn is_negative(&self) -> bool {
        self.v.is_negative()
    }

    pub fn powi(&self, n: usize) -> Self {
        Mp { v: self.v.powi(n, self.p, RM), p: self.p }
    }

    /// Same value rounded to a different mantissa length.
    pub fn with_bits(&self, bits: usize) -> Self {
        let mut v = self.v.clone();
        let _ = v.set_precision(bits, RM);
        Mp { v, p: bits }
    }

    fn wrap(&self, v: BigFloat) -> Self {
        Mp { v, p: self.p }
    }
}

impl Real for Mp {
    fn lift(&self, x: f64) -> Self {
        Mp::from_f64(x, self.p)
    }
    fn plus(&self, o: &Self) -> Self {
        self.wrap(self.v.add(&o.v, self.p, RM))
    }
    fn minus(&self, o: &Self) -> Self {
        self.wrap(self.v.sub(&o.v, self.p, RM))
    }
    fn times(&self, o: &Self) -> Self {
        self.wrap(self.v.mul(&o.v, self.p, RM))
    }
    fn over(&self, o: &Self) -> Self {
        self.wrap(self.v.div(&o.v, self.p, RM))
    }
    fn negated(&self) -> Self {
        self.wrap(self.v.neg())
    }
    fn exp(&self) -> Self {
        self.wrap(with_cc(|cc| self.v.exp(self.p, RM, cc)))
    }
    fn ln(&self) -> Self {
        self.wrap(with_cc(|cc| self.v.ln(self.p, RM, cc)))
    }
    fn sin(&self) -> Self {
        self.wrap(with_cc(|cc| self.v.sin(self.p, RM, cc)))
    }
    fn cos(&self) -> Self {
        self.wrap(with_cc(|cc| self.v.cos(self.p, RM, cc)))
    }
    fn sqrt(&self) -> Self {
        self.wrap(self.v.sqrt(self.p, RM))
    }
    fn is_zero(&self) -> bool {
        self.v.is_zero()
    }
    fn is_finite(&self) -> bool {
        !(self.v.is_nan() || self.v.is_inf())
    }
    fn frexp(&self) -> (f64, i64) {
        match self.v.as_raw_parts() {
            Some((m, _, s, e, _)) => {
                let top = *m.last().unwrap_or(&0);
                if top == 0 {
                    return (0.0, 0);
                }
                let mag = top as f64 / 18446744073709551616.0;
                (if s == Sign::Neg { -mag } else { mag }, e as i64)
            }
            None => (f64::NAN, 0),
        }
    }
}

/// Complex number over a [`Real`].
#[derive(Clone, Debug)]
pub struct Cx<T> {
    pub re: T,
    pub im: T,
}

impl<T: Real> Cx<T> {
    pub fn new(re: T, im: T) -> Self {
        Cx { re, im }
    }

    pub fn real(re: T) -> Self {
        let im = re.lift(0.0);
        Cx { re, im }
    }

    pub fn zero_like(x: &T) -> Self {
        Cx { re: x.lift(0.0), im: x.lift(0.0) }
    }

    pub fn plus(&self, o: &Self) -> Self {
        Cx { re: self.re.plus(&o.re), im: self.im.plus(&o.im) }
    }

    pub fn minus(&self, o: &Self) -> Self {
        Cx { re: self.re.minus(&o.re), im: self.im.minus(&o.im) }
    }

    pub fn times(&self, o: &Self) -> Self {
        Cx {
            re: self.re.times(&o.re).minus(&self.im.times(&o.im)),
            im: self.re.times(&o.im).plus(&self.im.times(&o.re)),
        }
    }

    pub fn times_real(&self, x: &T) -> Self {
        Cx { re: self.re.times(x), im: self.im.times(x) }
    }

    pub fn over(&self, o: &Self) -> Self {
        let den = o.re.times(&o.re).plus(&o.im.times(&o.im));
        Cx {
            re: self.re.times(&o.re).plus(&self.im.times(&o.im)).over(&den),
            im: self.im.times(&o.re).minus(&self.re.times(&o.im)).over(&den),
        }
    }

    /// exp(re) (cos im + i sin im)
    pub fn exp(&self) -> Self {
        let m = self.re.exp();
        Cx { re: m.times(&self.im.cos()), im: m.times(&self.im.sin()) }
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    /// (ln|z|, arg z) in double precision without overflowing.
    pub fn log_polar(&self) -> (f64, f64) {
        let (mr, er) = self.re.frexp();
        let (mi, ei) = self.im.frexp();
        if mr == 0.0 && mi == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        let e = if mr == 0.0 {
            ei
        } else if mi == 0.0 {
            er
        } else {
            er.max(ei)
        };
        let sh = |m: f64, ex: i64| if m == 0.0 { 0.0 } else { m * 2f64.powi((ex - e).max(-1100) as i32) };
        let (x, y) = (sh(mr, er), sh(mi, ei));
        (0.5 * (x * x + y * y).ln() + e as f64 * std::f64::consts::LN_2, y.atan2(x))
    }

    pub fn to_c64(&self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }
}

/// Gamma function of a positive real argument by Spouge's formula, accurate to about the
/// working precision of `x`.
pub fn gamma(x: &Mp) -> Mp {
    let bits = x.bits();
    // relative error ~ (2 pi)^-(a + 1/2)
    let a = (bits as f64 * std::f64::consts::LN_2 / (2.0 * std::f64::consts::PI).ln()).ceil() as usize + 2;
    // the alternating coefficient sum loses about a log2(e) bits
    let wp = bits + 2 * a + 64;
    let z = x.with_bits(wp).minus(&Mp::from_f64(1.0, wp));
    let af = Mp::from_f64(a as f64, wp);
    let two_pi = Mp::pi(wp).scaled(2.0);
    let mut sum = two_pi.sqrt();
    let mut fact = Mp::from_f64(1.0, wp);
    for k in 1..a {
        if k > 1 {
            fact = fact.scaled((k - 1) as f64);
        }
        let base = af.minus(&Mp::from_f64(k as f64, wp));
        // (a - k)^(k - 1/2) e^(a - k) / (k-1)!
        let mut c = base.ln().scaled(k as f64 - 0.5).plus(&base).exp().over(&fact);
        if k % 2 == 0 {
            c = c.negated();
        }
        sum = sum.plus(&c.over(&z.plus(&Mp::from_f64(k as f64, wp))));
    }
    let za = z.plus(&af);
    let lead = za.ln().times(&z.plus(&Mp::from_f64(0.5, wp))).minus(&za).exp();
    lead.times(&sum).with_bits(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frexp_round_trips() {
        for x in [1.0, 3.0, 0.75, -5.5, 1e300, -2.5e-200] {
            let m = Mp::from_f64(x, 256);
            assert_eq!(m.to_f64(), x);
            let (fm, fe) = x.frexp();
            assert_eq!(fm * 2f64.powi(fe as i32), x);
            assert!((0.5..1.0).contains(&fm.abs()));
        }
    }

    #[test]
    fn gamma_matches_known_values() {
        let g = gamma(&Mp::from_f64(0.5, 400));
        let sp = Mp::pi(400).sqrt();
        let rel = g.minus(&sp).over(&sp).frexp().1;
        assert!(rel < -380, "{rel}");
        let g5 = gamma(&Mp::from_f64(5.0, 256)).to_f64();
        assert!((g5 - 24.0).abs() < 1e-13);
    }

    #[test]
    fn log_polar_survives_huge_values() {
        let big = Mp::from_f64(1e300, 256).powi(3);
        let z = Cx::new(big.clone(), big.negated());
        let (l, a) = z.log_polar();
        assert!((l - (900.0 * 10f64.ln() + 0.5 * 2f64.ln())).abs() < 1e-9);
        assert!((a + std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }
}
