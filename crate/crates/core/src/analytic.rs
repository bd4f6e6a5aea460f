//! Ground-truth targets and worked model constructions.
//!
//! Two analytic examples anchor every test in the crate:
//!
//! * the anisotropic Gaussian `N(0, diag(1, 1/4))`, whose density at the
//!   origin is `1/π`, with bijective, injective, split and stochastic models;
//! * the uniform donut on the annulus `3 ≤ ‖x‖ ≤ 8`, with density
//!   `1/(55π)`, and its normalizing-flow, autoencoder, split and VAE models.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::numeric::density::{log_normal_1d, Density, StandardNormal, UniformBox};
use crate::numeric::map::{AffineMap, Smooth};
use crate::numeric::report::LogDensity;
use crate::numeric::rng::{std_normal, StreamRng};
use crate::numeric::Real;
use crate::stochastic::kernels::{ConditionalKernel, GaussianKernel};

pub const DONUT_R0: f64 = 3.0;
pub const DONUT_R1: f64 = 8.0;
/// Default VAE wedge half-width, 5 degrees.
pub const DEFAULT_ALPHA0: f64 = 5.0 * PI / 180.0;

/// Angle of `x` in `[0, 2π)`.
pub fn arg(x: &[f64]) -> f64 {
    let a = x[1].atan2(x[0]);
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed circular difference `a − b` in `(−π, π]`.
pub fn circular_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// The target `N(0, diag(1, 1/4))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnisotropicGaussian;

pub const GAUSS_STD: [f64; 2] = [1.0, 0.5];

impl Density for AnisotropicGaussian {
    fn dim(&self) -> usize {
        2
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        log_normal_1d(x[0], 0.0, GAUSS_STD[0]) + log_normal_1d(x[1], 0.0, GAUSS_STD[1])
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        vec![std_normal(rng), 0.5 * std_normal(rng)]
    }
    fn log_density_1d(&self, j: usize, v: f64) -> Option<f64> {
        Some(log_normal_1d(v, 0.0, GAUSS_STD[j]))
    }
    fn bounds(&self) -> Option<Vec<(f64, f64)>> {
        Some(vec![(-12.0, 12.0), (-6.0, 6.0)])
    }
}

pub fn gaussian_density(x: &[f64]) -> Result<LogDensity> {
    check_dim(2, x.len())?;
    Ok(LogDensity::plain(AnisotropicGaussian.log_density(x)))
}

/// Bijective pair: encoder `f_B(x) = (x₁, 2x₂)`, decoder `g_B(z) = (z₁, z₂/2)`.
pub fn gaussian_bijective_pair() -> (AffineMap, AffineMap) {
    let f = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
    let g = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]));
    (f, g)
}

/// Injective pair: encoder `f_I(x) = x₁`, decoder `g_I(z) = (z, 0)`.
pub fn gaussian_injective_pair() -> (AffineMap, AffineMap) {
    let f = AffineMap::linear(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
    let g = AffineMap::linear(DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
    (f, g)
}

/// Stochastic model of the Gaussian target with correlation `ρ` between
/// `x₁` and the 1-D code: decoder `N((ρz, 0), diag(1−ρ², 1/4))`, encoder
/// `N(ρx₁, 1−ρ²)`, prior `N(0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianStochastic {
    pub rho: f64,
}

impl GaussianStochastic {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!("correlation {rho} outside (-1, 1)")));
        }
        Ok(Self { rho })
    }

    pub fn prior(&self) -> StandardNormal {
        StandardNormal::new(1)
    }

    pub fn decoder(&self) -> GaussianKernel {
        let s = (1.0 - self.rho * self.rho).sqrt();
        GaussianKernel::linear(vec![vec![self.rho], vec![0.0]], vec![0.0, 0.0], vec![s, 0.5])
            .expect("valid by construction")
    }

    pub fn encoder(&self) -> GaussianKernel {
        let s = (1.0 - self.rho * self.rho).sqrt();
        GaussianKernel::linear(vec![vec![self.rho, 0.0]], vec![0.0], vec![s]).expect("valid by construction")
    }
}

/// Uniform distribution on the annulus `r0 ≤ ‖x‖ ≤ r1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DonutTarget {
    pub r0: f64,
    pub r1: f64,
}

impl Default for DonutTarget {
    fn default() -> Self {
        Self { r0: DONUT_R0, r1: DONUT_R1 }
    }
}

impl DonutTarget {
    pub fn new(r0: f64, r1: f64) -> Result<Self> {
        if !(r0 >= 0.0 && r0 < r1 && r1.is_finite()) {
            return Err(Error::InvalidParameter(format!("donut radii {r0}, {r1}")));
        }
        Ok(Self { r0, r1 })
    }

    /// `R₁² − R₀²`; the annulus area is `π·A`.
    pub fn a(&self) -> f64 {
        self.r1 * self.r1 - self.r0 * self.r0
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let r = x[0].hypot(x[1]);
        r >= self.r0 && r <= self.r1
    }

    /// Radial law `p(R = r) = 2r/A` on `[r0, r1]`.
    pub fn log_radial_density(&self, r: f64) -> f64 {
        if r >= self.r0 && r <= self.r1 {
            (2.0 * r / self.a()).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Inverse CDF of the radial law.
    pub fn radial_inverse_cdf(&self, u: f64) -> f64 {
        (u * self.a() + self.r0 * self.r0).sqrt()
    }

    /// Mean radius `(2/3)(R₁³ − R₀³)/A`; the autoencoder's manifold radius.
    pub fn r_manifold(&self) -> f64 {
        2.0 / 3.0 * (self.r1.powi(3) - self.r0.powi(3)) / self.a()
    }

    pub fn sample_radius(&self, rng: &mut StreamRng) -> f64 {
        self.radial_inverse_cdf(rng.random())
    }
}

impl Density for DonutTarget {
    fn dim(&self) -> usize {
        2
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            -(PI * self.a()).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        donut_split_sample(self, rng)
    }
    fn bounds(&self) -> Option<Vec<(f64, f64)>> {
        Some(vec![(-self.r1, self.r1); 2])
    }
}

pub fn donut_density(x: &[f64]) -> Result<LogDensity> {
    check_dim(2, x.len())?;
    Ok(LogDensity::plain(DonutTarget::default().log_density(x)))
}

/// Split-model sampler: uniform angle, radius by inverse CDF.
pub fn donut_split_sample(t: &DonutTarget, rng: &mut StreamRng) -> Vec<f64> {
    let a = TAU * rng.random::<f64>();
    let r = t.sample_radius(rng);
    vec![r * a.cos(), r * a.sin()]
}

/// Parameters shared by the donut model catalogue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DonutModels {
    pub target: DonutTarget,
    pub alpha0: f64,
}

impl Default for DonutModels {
    fn default() -> Self {
        Self { target: DonutTarget::default(), alpha0: DEFAULT_ALPHA0 }
    }
}

impl DonutModels {
    pub fn new(target: DonutTarget, alpha0: f64) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0 < PI) {
            return Err(Error::InvalidParameter(format!("wedge half-width {alpha0} outside (0, π)")));
        }
        Ok(Self { target, alpha0 })
    }

    pub fn r_manifold(&self) -> f64 {
        self.target.r_manifold()
    }

    pub fn nf(&self) -> DonutNf {
        DonutNf { r0: self.target.r0, r1: self.target.r1 }
    }

    pub fn vae_encoder(&self) -> DonutVaeEncoder {
        DonutVaeEncoder { alpha0: self.alpha0 }
    }

    pub fn vae_decoder(&self) -> DonutVaeDecoder {
        DonutVaeDecoder { target: self.target, alpha0: self.alpha0 }
    }

    /// Code prior of the angular models, `U[0, 2π)`.
    pub fn angle_prior(&self) -> UniformBox {
        UniformBox::new(vec![0.0], vec![TAU]).expect("valid interval")
    }
}

/// Normalizing-flow decoder of the donut: keep the direction of `z` and map
/// `‖z‖` through the Gaussian radial CDF onto the radial law of the annulus,
/// `r = ((1 − e^{−‖z‖²/2})·A + R₀²)^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DonutNf {
    pub r0: f64,
    pub r1: f64,
}

impl Default for DonutNf {
    fn default() -> Self {
        Self { r0: DONUT_R0, r1: DONUT_R1 }
    }
}

impl DonutNf {
    fn a(&self) -> f64 {
        self.r1 * self.r1 - self.r0 * self.r0
    }

    /// Closed-form `log|det J_g(z)| = −‖z‖²/2 + log(A/2)`.
    pub fn logdet(&self, z: &[f64]) -> f64 {
        -0.5 * (z[0] * z[0] + z[1] * z[1]) + (0.5 * self.a()).ln()
    }

    /// Whether `x` lies strictly inside the annulus, where the inverse exists.
    pub fn in_range(&self, x: &[f64]) -> bool {
        let r = x[0].hypot(x[1]);
        r > self.r0 && r < self.r1
    }

    /// Generic inverse (used for encoder Jacobians).
    pub fn inverse_generic<R: Real>(&self, x: &[R]) -> Vec<R> {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let rho = (r2 - R::cst(self.r0 * self.r0)).scale(1.0 / self.a());
        let s2 = (R::cst(1.0) - rho).ln().scale(-2.0);
        let k = (s2 / r2).sqrt();
        vec![x[0] * k, x[1] * k]
    }

    /// Closed-form inverse; `None` outside the open annulus.
    pub fn inverse(&self, x: &[f64]) -> Option<Vec<f64>> {
        if !self.in_range(x) {
            return None;
        }
        let r2 = x[0] * x[0] + x[1] * x[1];
        let rho = (r2 - self.r0 * self.r0) / self.a();
        let s2 = -2.0 * (-rho).ln_1p();
        let k = (s2 / r2).sqrt();
        Some(vec![x[0] * k, x[1] * k])
    }
}

impl Smooth for DonutNf {
    fn dim_in(&self) -> usize {
        2
    }
    fn dim_out(&self) -> usize {
        2
    }
    fn eval<R: Real>(&self, z: &[R]) -> Vec<R> {
        let s2 = z[0] * z[0] + z[1] * z[1];
        let u = R::cst(1.0) - (-s2.scale(0.5)).exp();
        let r = (u.scale(self.a()) + R::cst(self.r0 * self.r0)).sqrt();
        let k = r / s2.sqrt();
        vec![z[0] * k, z[1] * k]
    }
}

/// Decoder of the default donut flow. Rejects `z = 0`.
pub fn donut_nf(z: &[f64]) -> Result<Vec<f64>> {
    check_dim(2, z.len())?;
    if z[0] == 0.0 && z[1] == 0.0 {
        return Err(Error::InvalidParameter("donut flow undefined at z = 0".into()));
    }
    Ok(DonutNf::default().eval(z))
}

pub fn donut_nf_logdet(z: &[f64]) -> Result<f64> {
    check_dim(2, z.len())?;
    if z[0] == 0.0 && z[1] == 0.0 {
        return Err(Error::InvalidParameter("donut flow undefined at z = 0".into()));
    }
    Ok(DonutNf::default().logdet(z))
}

/// VAE encoder `p(z | x) = U(arg(x) − α₀, arg(x) + α₀)` on the circle,
/// with codes represented in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DonutVaeEncoder {
    pub alpha0: f64,
}

impl ConditionalKernel for DonutVaeEncoder {
    fn target_dim(&self) -> usize {
        1
    }
    fn cond_dim(&self) -> usize {
        2
    }
    fn log_density(&self, z: &[f64], x: &[f64]) -> f64 {
        if (0.0..TAU).contains(&z[0]) && circular_diff(z[0], arg(x)).abs() <= self.alpha0 {
            -(2.0 * self.alpha0).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn sample(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let u: f64 = rng.random_range(-1.0..1.0);
        vec![wrap_angle(arg(x) + self.alpha0 * u)]
    }
}

/// VAE decoder: uniform angle in the wedge `z ± α₀`, radius from the radial
/// law. Density `(1/(2α₀))·(2/A)` on the wedge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DonutVaeDecoder {
    pub target: DonutTarget,
    pub alpha0: f64,
}

impl ConditionalKernel for DonutVaeDecoder {
    fn target_dim(&self) -> usize {
        2
    }
    fn cond_dim(&self) -> usize {
        1
    }
    fn log_density(&self, x: &[f64], z: &[f64]) -> f64 {
        if self.target.contains(x) && circular_diff(arg(x), z[0]).abs() <= self.alpha0 {
            -(2.0 * self.alpha0).ln() + (2.0 / self.target.a()).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn sample(&self, z: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let u: f64 = rng.random_range(-1.0..1.0);
        let a = z[0] + self.alpha0 * u;
        let r = self.target.sample_radius(rng);
        vec![r * a.cos(), r * a.sin()]
    }
}
