//! Gibbs fiber conditionals of normalized autoencoders.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::Mutex;

use rand::Rng;

use super::SplitModel;
use crate::analytic::{arg, circular_diff, DonutTarget};
use crate::error::{check_dim, Error, Result};
use crate::numeric::integrate::quad_integrate_1d;
use crate::numeric::report::{CovReport, LogDensity};
use crate::numeric::rng::StreamRng;

/// Absolute tolerance of the quadrature for the normalizer `B`.
pub const GIBBS_QUAD_TOL: f64 = 1e-13;

/// Straight fiber segment `x(t) = origin + t·direction`, `t ∈ [t_lo, t_hi]`,
/// with a unit direction so that `t` is arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFiber {
    pub origin: Vec<f64>,
    pub direction: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl LineFiber {
    pub fn new(origin: Vec<f64>, direction: Vec<f64>, t_lo: f64, t_hi: f64) -> Result<Self> {
        check_dim(origin.len(), direction.len())?;
        let n = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite() && t_lo < t_hi) {
            return Err(Error::InvalidParameter("fiber needs a direction and t_lo < t_hi".into()));
        }
        let direction = direction.into_iter().map(|v| v / n).collect();
        Ok(Self { origin, direction, t_lo, t_hi })
    }

    /// Ray of the annulus at polar angle `theta`.
    pub fn donut_ray(target: &DonutTarget, theta: f64) -> Self {
        Self { origin: vec![0.0, 0.0], direction: vec![theta.cos(), theta.sin()], t_lo: target.r0, t_hi: target.r1 }
    }

    pub fn point(&self, t: f64) -> Vec<f64> {
        self.origin.iter().zip(&self.direction).map(|(o, d)| o + t * d).collect()
    }

    /// Arc-length coordinate of `x` if it lies on the segment.
    pub fn coordinate(&self, x: &[f64]) -> Option<f64> {
        let rel: Vec<f64> = x.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        let t: f64 = rel.iter().zip(&self.direction).map(|(a, b)| a * b).sum();
        let off = rel.iter().zip(&self.direction).map(|(a, d)| (a - t * d).powi(2)).sum::<f64>().sqrt();
        let scale = 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt();
        (off <= 1e-9 * scale && t >= self.t_lo && t <= self.t_hi).then_some(t)
    }
}

/// `p(x | F) = exp(−‖x − x̂‖²/T) / B` on a fiber, `B` the fiber integral of
/// the numerator. `B` is memoized per fiber extent relative to `x̂`.
#[derive(Debug)]
pub struct GibbsFiberConditional {
    pub temperature: f64,
    cache: Mutex<HashMap<(u64, u64, u64), f64>>,
}

impl Clone for GibbsFiberConditional {
    fn clone(&self) -> Self {
        Self { temperature: self.temperature, cache: Mutex::new(self.cache.lock().map(|c| c.clone()).unwrap_or_default()) }
    }
}

impl GibbsFiberConditional {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { temperature, cache: Mutex::new(HashMap::new()) })
    }

    /// `log B` for a fiber whose representative sits at arc length `t_hat`.
    pub fn log_normalizer(&self, fiber: &LineFiber, t_hat: f64) -> Result<f64> {
        let (a, b) = (fiber.t_lo - t_hat, fiber.t_hi - t_hat);
        let key = (a.to_bits(), b.to_bits(), self.temperature.to_bits());
        if let Some(v) = self.cache.lock().ok().and_then(|c| c.get(&key).copied()) {
            return Ok(v);
        }
        let t = self.temperature;
        let bval = quad_integrate_1d(|u| (-u * u / t).exp(), a, b, GIBBS_QUAD_TOL)?;
        if !(bval > 0.0) {
            return Err(Error::NonConvergence(format!("fiber normalizer {bval}")));
        }
        let lb = bval.ln();
        if let Ok(mut c) = self.cache.lock() {
            c.insert(key, lb);
        }
        Ok(lb)
    }

    /// `−‖x − x̂‖²/T − log B`, `-inf` for `x` off the fiber.
    pub fn log_density(&self, fiber: &LineFiber, t_hat: f64, x: &[f64]) -> Result<LogDensity> {
        check_dim(fiber.origin.len(), x.len())?;
        let lb = self.log_normalizer(fiber, t_hat)?;
        let Some(t) = fiber.coordinate(x) else {
            return Ok(CovReport::outside("x off the fiber").into());
        };
        let d2 = (t - t_hat) * (t - t_hat);
        Ok(CovReport::from_terms([("-‖x − x̂‖²/T", -d2 / self.temperature), ("-log B", -lb)]).into())
    }
}

/// Annulus with uniform angle and a Gibbs radial conditional centred at the
/// manifold radius; the conditional per unit area is `p(r)/r`.
#[derive(Debug, Clone)]
pub struct GibbsDonutSplit {
    pub target: DonutTarget,
    pub gibbs: GibbsFiberConditional,
}

impl GibbsDonutSplit {
    pub fn new(target: DonutTarget, temperature: f64) -> Result<Self> {
        Ok(Self { target, gibbs: GibbsFiberConditional::new(temperature)? })
    }
}

impl SplitModel for GibbsDonutSplit {
    fn dim(&self) -> usize {
        2
    }
    fn encode(&self, x: &[f64]) -> Option<Vec<f64>> {
        (x[0] != 0.0 || x[1] != 0.0).then(|| vec![arg(x)])
    }
    fn log_fiber_mass(&self, _z: &[f64]) -> f64 {
        -TAU.ln()
    }
    fn log_fiber_conditional(&self, x: &[f64], z: &[f64]) -> f64 {
        if circular_diff(arg(x), z[0]).abs() > 1e-9 {
            return f64::NEG_INFINITY;
        }
        let fiber = LineFiber::donut_ray(&self.target, z[0]);
        let r = x[0].hypot(x[1]);
        self.gibbs
            .log_density(&fiber, self.target.r_manifold(), x)
            .map_or(f64::NAN, |l| l.value - r.ln())
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let a = TAU * rng.random::<f64>();
        let rm = self.target.r_manifold();
        let r = loop {
            let r = self.target.r0 + (self.target.r1 - self.target.r0) * rng.random::<f64>();
            if rng.random::<f64>() < (-(r - rm).powi(2) / self.gibbs.temperature).exp() {
                break r;
            }
        };
        vec![r * a.cos(), r * a.sin()]
    }
}
