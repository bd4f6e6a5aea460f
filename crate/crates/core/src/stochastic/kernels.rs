use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::density::{log_normal_1d, Density};
use crate::numeric::rng::{std_normal, StreamRng};

/// A conditional distribution `p(target | cond)` with exact log-density and
/// sampler.
pub trait ConditionalKernel: Send + Sync {
    fn target_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn log_density(&self, target: &[f64], cond: &[f64]) -> f64;
    fn sample(&self, cond: &[f64], rng: &mut StreamRng) -> Vec<f64>;
}

/// `x ↦ A x + b` with `A` stored row-major; serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFn {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl AffineFn {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        check_dim(b.len(), a.len())?;
        if let Some(first) = a.first() {
            for row in &a {
                check_dim(first.len(), row.len())?;
            }
        }
        Ok(Self { a, b })
    }

    /// Constant function of an input of dimension `dim_in`.
    pub fn constant(b: Vec<f64>, dim_in: usize) -> Self {
        Self { a: vec![vec![0.0; dim_in]; b.len()], b }
    }

    pub fn dim_in(&self) -> usize {
        self.a.first().map_or(0, |r| r.len())
    }

    pub fn dim_out(&self) -> usize {
        self.b.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| b + row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>())
            .collect()
    }
}

/// `N(mean(c), diag(std(c)²))` with affine mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    pub mean: AffineFn,
    pub std: AffineFn,
}

impl GaussianKernel {
    pub fn new(mean: AffineFn, std: AffineFn) -> Result<Self> {
        check_dim(mean.dim_out(), std.dim_out())?;
        check_dim(mean.dim_in(), std.dim_in())?;
        Ok(Self { mean, std })
    }

    /// `N(A c + b, diag(std²))` with constant standard deviations.
    pub fn linear(a: Vec<Vec<f64>>, b: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let mean = AffineFn::new(a, b)?;
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("kernel standard deviation must be positive".into()));
        }
        let std = AffineFn::constant(std, mean.dim_in());
        Self::new(mean, std)
    }

    /// Mean and standard deviations at a condition; errors when any standard
    /// deviation is not strictly positive.
    pub fn moments(&self, cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.std.eval(cond);
        if s.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter(format!("non-positive kernel std {s:?} at {cond:?}")));
        }
        Ok((self.mean.eval(cond), s))
    }
}

impl ConditionalKernel for GaussianKernel {
    fn target_dim(&self) -> usize {
        self.mean.dim_out()
    }
    fn cond_dim(&self) -> usize {
        self.mean.dim_in()
    }
    fn log_density(&self, target: &[f64], cond: &[f64]) -> f64 {
        match self.moments(cond) {
            Ok((m, s)) => target.iter().zip(m.iter().zip(&s)).map(|(&x, (&m, &s))| log_normal_1d(x, m, s)).sum(),
            Err(_) => f64::NAN,
        }
    }
    fn sample(&self, cond: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let m = self.mean.eval(cond);
        let s = self.std.eval(cond);
        m.iter().zip(&s).map(|(m, s)| m + s * std_normal(rng)).collect()
    }
}

/// A kernel that ignores its condition.
pub struct Unconditional<D: Density> {
    pub law: D,
    pub cond_dim: usize,
}

impl<D: Density> ConditionalKernel for Unconditional<D> {
    fn target_dim(&self) -> usize {
        self.law.dim()
    }
    fn cond_dim(&self) -> usize {
        self.cond_dim
    }
    fn log_density(&self, target: &[f64], _cond: &[f64]) -> f64 {
        self.law.log_density(target)
    }
    fn sample(&self, _cond: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        self.law.sample(rng)
    }
}
