//! Distortion, divergence and capacity of a reconstruction `x ↦ x̂`.

use serde::{Deserialize, Serialize};

use crate::analytic::{DonutTarget, GAUSS_STD};
use crate::error::{check_dim, Error, Result};
use crate::injective::FiniteCodebook;
use crate::numeric::density::{Density, Discrete};
use crate::numeric::integrate::mean_and_se;
use crate::numeric::map::Map;
use crate::numeric::rng::{std_normal, StreamRng};
use crate::split::{DonutSplit, SplitModel};
use crate::stochastic::ConditionalKernel;

/// Pseudo-count added to every histogram cell.
pub const HISTOGRAM_SMOOTHING: f64 = 0.5;

/// A sampler of `p(X̂ | X)` built from an encoder and a decoder.
pub trait Reconstructor: Send + Sync {
    fn dim(&self) -> usize;
    fn reconstruct(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64>;
    /// Code capacity: code dimension for continuous codes, entropy in nats
    /// for finite codebooks.
    fn capacity(&self) -> Option<f64> {
        None
    }
}

/// `x̂ = g(f(x))`.
pub struct DeterministicPair<'a> {
    pub encoder: &'a dyn Map,
    pub decoder: &'a dyn Map,
}

impl Reconstructor for DeterministicPair<'_> {
    fn dim(&self) -> usize {
        self.encoder.dim_in()
    }
    fn reconstruct(&self, x: &[f64], _rng: &mut StreamRng) -> Vec<f64> {
        self.decoder.apply(&self.encoder.apply(x))
    }
    fn capacity(&self) -> Option<f64> {
        Some(self.encoder.dim_out() as f64)
    }
}

/// `z ~ p(z|x)`, `x̂ ~ p(x|z)`.
pub struct StochasticPair<'a> {
    pub encoder: &'a dyn ConditionalKernel,
    pub decoder: &'a dyn ConditionalKernel,
}

impl Reconstructor for StochasticPair<'_> {
    fn dim(&self) -> usize {
        self.encoder.cond_dim()
    }
    fn reconstruct(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let z = self.encoder.sample(x, rng);
        self.decoder.sample(&z, rng)
    }
    fn capacity(&self) -> Option<f64> {
        Some(self.encoder.target_dim() as f64)
    }
}

/// Donut split flow: keep the angle code, redraw the radius on its fiber.
pub struct DonutFiberResample {
    pub model: DonutSplit,
}

impl DonutFiberResample {
    pub fn new(target: DonutTarget) -> Self {
        Self { model: DonutSplit { target } }
    }
}

impl Reconstructor for DonutFiberResample {
    fn dim(&self) -> usize {
        2
    }
    fn reconstruct(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let a = self.model.encode(x).map_or(0.0, |z| z[0]);
        let r = self.model.target.sample_radius(rng);
        vec![r * a.cos(), r * a.sin()]
    }
    fn capacity(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Gaussian split flow: keep `x₁`, redraw `x₂ ~ N(0, σ₂²)` on the vertical
/// fiber.
pub struct GaussianFiberResample;

impl Reconstructor for GaussianFiberResample {
    fn dim(&self) -> usize {
        2
    }
    fn reconstruct(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        vec![x[0], GAUSS_STD[1] * std_normal(rng)]
    }
    fn capacity(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Nearest-representative quantization.
pub struct KmeansReconstruction<'a> {
    pub codebook: &'a FiniteCodebook,
}

impl Reconstructor for KmeansReconstruction<'_> {
    fn dim(&self) -> usize {
        self.codebook.dim()
    }
    fn reconstruct(&self, x: &[f64], _rng: &mut StreamRng) -> Vec<f64> {
        self.codebook.decode(self.codebook.encode(x)).to_vec()
    }
    fn capacity(&self) -> Option<f64> {
        Discrete::new(self.codebook.priors.clone()).ok().map(|d| d.entropy())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
    Euclidean,
}

impl Distance {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        match self {
            Self::SquaredEuclidean => s,
            Self::Euclidean => s.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Divergence {
    /// Energy distance `2E‖X−Y‖ − E‖X−X'‖ − E‖Y−Y'‖`.
    #[default]
    Energy,
    /// `KL(target ‖ reconstruction)` between smoothed 2-D histograms.
    HistogramKl { lo: [f64; 2], hi: [f64; 2], bins: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffMetrics {
    /// `δ̄ = E[δ(x, x̂)]`.
    pub distortion: f64,
    pub distortion_std_error: f64,
    /// `Δ̄` between target and reconstruction distributions.
    pub divergence: f64,
    /// Absent for the histogram divergence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_proxy: Option<f64>,
    pub n: usize,
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    Distance::Euclidean.eval(a, b)
}

/// Blocks of the energy-distance estimator.
pub const ENERGY_BLOCKS: usize = 50;

fn block_energy(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let (m, k) = (x.len() as f64, y.len() as f64);
    let mut xy = 0.0;
    for a in x {
        for b in y {
            xy += norm_diff(a, b);
        }
    }
    let within = |s: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += norm_diff(&s[i], &s[j]);
            }
        }
        let n = s.len() as f64;
        2.0 * acc / (n * (n - 1.0))
    };
    2.0 * xy / (m * k) - within(x) - within(y)
}

/// Energy distance `2E‖X−Y‖ − E‖X−X'‖ − E‖Y−Y'‖` by unbiased U-statistics on
/// [`ENERGY_BLOCKS`] disjoint blocks; returns the block mean and its
/// standard error.
pub fn energy_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n = x.len().min(y.len());
    let blocks = ENERGY_BLOCKS.min(n / 2);
    if blocks < 2 {
        return Err(Error::InvalidParameter("energy distance needs at least 4 draws per sample".into()));
    }
    let (bx, by) = (x.len() / blocks, y.len() / blocks);
    let vals: Vec<f64> =
        (0..blocks).map(|b| block_energy(&x[b * bx..(b + 1) * bx], &y[b * by..(b + 1) * by])).collect();
    Ok(mean_and_se(&vals))
}

/// `Σ p log(p/q)` over a `bins × bins` grid with [`HISTOGRAM_SMOOTHING`]
/// added to every cell of both histograms. Points outside the box are
/// dropped.
pub fn histogram_kl(p: &[Vec<f64>], q: &[Vec<f64>], lo: [f64; 2], hi: [f64; 2], bins: usize) -> Result<f64> {
    if bins == 0 || !(lo[0] < hi[0] && lo[1] < hi[1]) {
        return Err(Error::InvalidParameter("histogram needs bins >= 1 and a non-empty box".into()));
    }
    let hist = |s: &[Vec<f64>]| -> Result<Vec<f64>> {
        let mut h = vec![HISTOGRAM_SMOOTHING; bins * bins];
        for x in s {
            check_dim(2, x.len())?;
            let cell = |j: usize| ((x[j] - lo[j]) / (hi[j] - lo[j]) * bins as f64).floor();
            let (a, b) = (cell(0), cell(1));
            if a >= 0.0 && b >= 0.0 && a < bins as f64 && b < bins as f64 {
                h[a as usize * bins + b as usize] += 1.0;
            }
        }
        let total: f64 = h.iter().sum();
        Ok(h.into_iter().map(|v| v / total).collect())
    };
    let (hp, hq) = (hist(p)?, hist(q)?);
    Ok(hp.iter().zip(&hq).map(|(a, b)| a * (a / b).ln()).sum())
}

/// Distortion over `2n` pairs `(x, x̂)` and divergence between `2n` fresh
/// target draws and the `2n` reconstructions.
pub fn tradeoff_metrics(
    target: &dyn Density,
    model: &dyn Reconstructor,
    distance: Distance,
    divergence: Divergence,
    n: usize,
    rng: &mut StreamRng,
) -> Result<TradeoffMetrics> {
    check_dim(target.dim(), model.dim())?;
    if n < 2 {
        return Err(Error::InvalidParameter("tradeoff_metrics needs n >= 2".into()));
    }
    let mut d = Vec::with_capacity(2 * n);
    let mut recon = Vec::with_capacity(2 * n);
    for _ in 0..2 * n {
        let x = target.sample(rng);
        let xh = model.reconstruct(&x, rng);
        d.push(distance.eval(&x, &xh));
        recon.push(xh);
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distortion".into()));
    }
    let reference: Vec<Vec<f64>> = (0..2 * n).map(|_| target.sample(rng)).collect();
    let (dist_mean, dist_se) = mean_and_se(&d);
    let (div, div_se) = match divergence {
        Divergence::Energy => {
            let (e, se) = energy_distance(&reference, &recon)?;
            (e, Some(se))
        }
        Divergence::HistogramKl { lo, hi, bins } => (histogram_kl(&reference, &recon, lo, hi, bins)?, None),
    };
    Ok(TradeoffMetrics {
        distortion: dist_mean,
        distortion_std_error: dist_se,
        divergence: div,
        divergence_std_error: div_se,
        capacity_proxy: model.capacity(),
        n: 2 * n,
    })
}
