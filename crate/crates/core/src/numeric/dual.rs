//! Forward-mode dual numbers.
//!
//! Maps are written once against [`Real`] and evaluated either on plain
//! `f64` or on [`Dual`] to obtain directional derivatives. `Dual<Dual<f64>>`
//! gives exact mixed second derivatives, which the rectangular gradient
//! estimators use for `d/dθ J_g`.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Scalar arithmetic needed by every differentiable map in the crate.
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    /// Primal value, discarding all tangent parts.
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    /// Standard normal CDF.
    fn norm_cdf(self) -> Self;
    /// Standard normal quantile; argument must lie in (0, 1).
    fn norm_ppf(self) -> Self;

    fn powi(self, n: i32) -> Self {
        let mut acc = Self::cst(1.0);
        let base = if n < 0 { Self::cst(1.0) / self } else { self };
        for _ in 0..n.unsigned_abs() {
            acc = acc * base;
        }
        acc
    }

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn norm_cdf(self) -> Self {
        0.5 * libm::erfc(-self / std::f64::consts::SQRT_2)
    }
    fn norm_ppf(self) -> Self {
        let q = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * self);
        // One Newton step against the accurate CDF.
        let pdf = (-0.5 * q * q).exp() * INV_SQRT_2PI;
        if pdf > 0.0 {
            q - (q.norm_cdf() - self) / pdf
        } else {
            q
        }
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// `re + du·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T: Real = f64> {
    pub re: T,
    pub du: T,
}

pub type Dual64 = Dual<f64>;

impl<T: Real> Dual<T> {
    pub fn new(re: T, du: T) -> Self {
        Self { re, du }
    }

    pub fn constant(re: T) -> Self {
        Self { re, du: T::cst(0.0) }
    }

    pub fn variable(re: T) -> Self {
        Self { re, du: T::cst(1.0) }
    }

    fn chain(self, re: T, deriv: T) -> Self {
        Self { re, du: self.du * deriv }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.du + o.du)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.du - o.du)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.du * o.re + self.re * o.du)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.du - q * o.du) / o.re)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.du)
    }
}

impl<T: Real> Real for Dual<T> {
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }
    fn value(self) -> f64 {
        self.re.value()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::cst(1.0) / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::cst(0.5) / s)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, T::cst(1.0) - t * t)
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = x.re * x.re + self.re * self.re;
        Self::new(self.re.atan2(x.re), (x.re * self.du - self.re * x.du) / r2)
    }
    fn norm_cdf(self) -> Self {
        let pdf = (-(self.re * self.re).scale(0.5)).exp().scale(INV_SQRT_2PI);
        self.chain(self.re.norm_cdf(), pdf)
    }
    fn norm_ppf(self) -> Self {
        let q = self.re.norm_ppf();
        let pdf = (-(q * q).scale(0.5)).exp().scale(INV_SQRT_2PI);
        self.chain(q, T::cst(1.0) / pdf)
    }
}
