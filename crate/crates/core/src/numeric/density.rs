//! Exactly evaluable, samplable distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{std_normal, StreamRng};
use crate::error::{check_dim, Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A distribution with exact log-density and an exact sampler. Used both for
/// code priors `p(Z)` and for ground-truth targets `p*(X)`.
pub trait Density: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64>;

    /// Marginal log-density of coordinate `j` when the law factorizes over
    /// coordinates.
    fn log_density_1d(&self, _j: usize, _v: f64) -> Option<f64> {
        None
    }

    /// Box outside of which the density is zero or negligible (below e^-70).
    fn bounds(&self) -> Option<Vec<(f64, f64)>> {
        None
    }
}

pub use Density as CodeDistribution;
pub use Density as AnalyticTarget;

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(mean(exp(v)))`.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    log_sum_exp(v) - (v.len() as f64).ln()
}

pub fn log_normal_1d(x: f64, mean: f64, std: f64) -> f64 {
    let u = (x - mean) / std;
    -0.5 * u * u - std.ln() - 0.5 * LN_2PI
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardNormal {
    pub dim: usize,
}

impl StandardNormal {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Density for StandardNormal {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| log_normal_1d(v, 0.0, 1.0)).sum()
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        (0..self.dim).map(|_| std_normal(rng)).collect()
    }
    fn log_density_1d(&self, _j: usize, v: f64) -> Option<f64> {
        Some(log_normal_1d(v, 0.0, 1.0))
    }
    fn bounds(&self) -> Option<Vec<(f64, f64)>> {
        Some(vec![(-12.0, 12.0); self.dim])
    }
}

/// Axis-aligned Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), std.len())?;
        if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("Gaussian standard deviations must be positive".into()));
        }
        Ok(Self { mean, std })
    }
}

impl Density for DiagGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| log_normal_1d(v, m, s))
            .sum()
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m + s * std_normal(rng))
            .collect()
    }
    fn log_density_1d(&self, j: usize, v: f64) -> Option<f64> {
        Some(log_normal_1d(v, self.mean[j], self.std[j]))
    }
    fn bounds(&self) -> Option<Vec<(f64, f64)>> {
        Some(self.mean.iter().zip(&self.std).map(|(m, s)| (m - 12.0 * s, m + 12.0 * s)).collect())
    }
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub components: Vec<DiagGaussian>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        check_dim(weights.len(), components.len())?;
        if weights.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}")));
        }
        let d = components[0].dim();
        for c in &components {
            check_dim(d, c.dim())?;
        }
        Ok(Self { weights, components })
    }

    /// Per-component `log p(k) + log N(x | μ_k, Σ_k)`.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect()
    }

    /// `p(Z = k | x)` by Bayes' rule.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let lj = self.log_joint(x);
        let norm = log_sum_exp(&lj);
        lj.iter().map(|l| (l - norm).exp()).collect()
    }
}

impl Density for Gmm {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.log_joint(x))
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.components[k].sample(rng)
    }
    fn bounds(&self) -> Option<Vec<(f64, f64)>> {
        let d = self.dim();
        let per: Vec<Vec<(f64, f64)>> = self.components.iter().filter_map(|c| c.bounds()).collect();
        Some(
            (0..d)
                .map(|j| {
                    per.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b[j].0), hi.max(b[j].1)))
                })
                .collect(),
        )
    }
}

/// Uniform law on a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl UniformBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidParameter("uniform box needs finite lo < hi".into()));
        }
        Ok(Self { lo, hi })
    }

    fn log_volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a).ln()).sum()
    }
}

impl Density for UniformBox {
    fn dim(&self) -> usize {
        self.lo.len()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        let inside = x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b);
        if inside {
            -self.log_volume()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect()
    }
    fn log_density_1d(&self, j: usize, v: f64) -> Option<f64> {
        let (a, b) = (self.lo[j], self.hi[j]);
        Some(if v >= a && v <= b { -(b - a).ln() } else { f64::NEG_INFINITY })
    }
    fn bounds(&self) -> Option<Vec<(f64, f64)>> {
        Some(self.lo.iter().copied().zip(self.hi.iter().copied()).collect())
    }
}

/// Distribution over the finite code set `{0, …, K−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrete {
    pub probs: Vec<f64>,
}

impl Discrete {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidParameter("discrete probabilities must be non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("discrete probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn log_prob(&self, k: usize) -> f64 {
        self.probs.get(k).map_or(f64::NEG_INFINITY, |p| p.ln())
    }

    pub fn sample_index(&self, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}
