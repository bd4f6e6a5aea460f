//! Integration oracles: uniform Monte Carlo over a box and adaptive
//! Gauss-Kronrod (7/15) quadrature.

use rand::Rng;

use super::rng::StreamRng;
use crate::error::{check_dim, Error, Result};

/// Abort threshold for non-finite integrand values.
pub const MAX_NONFINITE_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
    pub nonfinite: usize,
}

impl McEstimate {
    /// `|estimate − target| ≤ k·σ`, with a tiny floor for zero-variance cases.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.estimate - target).abs() <= k * self.std_error + 1e-12 * target.abs().max(1.0)
    }

    /// `(estimate − target) / σ`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.estimate - target) / self.std_error.max(1e-300)
    }
}

/// Mean and standard error of a sample.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Uniform-sampling estimate of `∫_box f`. Non-finite values are counted,
/// excluded from the sum, and abort the run above 0.1% of draws.
pub fn mc_integrate(
    f: impl Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> Result<McEstimate> {
    check_dim(lo.len(), hi.len())?;
    if n < 2 {
        return Err(Error::InvalidParameter("mc_integrate needs n >= 2".into()));
    }
    let mut volume = 1.0;
    for (a, b) in lo.iter().zip(hi) {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidParameter(format!("integration box [{a}, {b}]")));
        }
        volume *= b - a;
    }
    let mut x = vec![0.0; lo.len()];
    let (mut sum, mut sum2, mut bad) = (0.0, 0.0, 0usize);
    for _ in 0..n {
        for (k, xi) in x.iter_mut().enumerate() {
            *xi = lo[k] + (hi[k] - lo[k]) * rng.random::<f64>();
        }
        let v = f(&x);
        if v.is_finite() {
            sum += v;
            sum2 += v * v;
        } else {
            bad += 1;
        }
    }
    if bad as f64 > MAX_NONFINITE_FRACTION * n as f64 {
        return Err(Error::TooManyNonFinite { count: bad, n });
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    Ok(McEstimate {
        estimate: volume * mean,
        std_error: volume * (var / nf).sqrt(),
        n,
        nonfinite: bad,
    })
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;
const INITIAL_PANELS: usize = 4;

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive Gauss-Kronrod quadrature of `f` over `[a, b]` to
/// absolute tolerance `tol`.
pub fn quad_integrate_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidParameter(format!("quadrature interval [{a}, {b}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("quadrature tolerance must be positive".into()));
    }
    // Start from a few equal panels so that a single GK pair cannot agree by
    // accident on a badly resolved integrand.
    let mut parts = Vec::with_capacity(64);
    let w = (b - a) / INITIAL_PANELS as f64;
    for i in 0..INITIAL_PANELS {
        let lo = a + w * i as f64;
        let hi = if i + 1 == INITIAL_PANELS { b } else { a + w * (i + 1) as f64 };
        let (v, e) = gk15(&f, lo, hi);
        parts.push((lo, hi, v, e));
    }
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::NonFinite("quadrature integrand".into()));
        }
        if err <= tol {
            return Ok(total);
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(Error::NonConvergence(format!(
                "quadrature error {err:e} above {tol:e} after {MAX_INTERVALS} subintervals"
            )));
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::NonConvergence("quadrature interval underflow".into()));
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Nested 1-D quadrature over a rectangle.
pub fn quad_integrate_2d(
    f: impl Fn(f64, f64) -> f64,
    x: (f64, f64),
    y: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let width = y.1 - y.0;
    let inner_tol = tol / (4.0 * width.max(1.0));
    let failure = std::cell::RefCell::new(None);
    let outer = quad_integrate_1d(
        |u| match quad_integrate_1d(|v| f(u, v), y.0, y.1, inner_tol) {
            Ok(r) => r,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        x.0,
        x.1,
        tol / 2.0,
    )?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(outer),
    }
}
