//! Piecewise-constant split model: each facet's mass spread uniformly over
//! the facet.

use crate::error::{check_dim, Error, Result};
use crate::injective::FiniteCodebook;
use crate::numeric::report::{CovReport, LogDensity};
use crate::numeric::rng::seeded;
use rand::Rng;

/// Draws used to estimate facet volumes in more than one dimension.
pub const FACET_VOLUME_DRAWS: usize = 400_000;

/// A finite codebook whose facets are clipped to a bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    pub codebook: FiniteCodebook,
    pub bbox: Vec<(f64, f64)>,
    /// `|F(k)|` of each clipped facet.
    pub volumes: Vec<f64>,
}

impl PiecewiseConstant {
    /// Facet volumes are exact in one dimension and estimated from
    /// [`FACET_VOLUME_DRAWS`] seeded uniform draws otherwise.
    pub fn new(codebook: FiniteCodebook, bbox: Vec<(f64, f64)>) -> Result<Self> {
        check_dim(codebook.dim(), bbox.len())?;
        if bbox.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
            return Err(Error::InvalidParameter("facets need a finite bounding box".into()));
        }
        let volumes = if bbox.len() == 1 && codebook.vq.is_none() {
            volumes_1d(&codebook, bbox[0])
        } else {
            volumes_mc(&codebook, &bbox)
        };
        if let Some(k) = volumes.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter(format!("facet {k} has no volume inside the bounding box")));
        }
        Ok(Self { codebook, bbox, volumes })
    }

    /// Histogram with `masses.len()` equal bins on `[lo, hi)`: representatives
    /// at bin centres, so the facets are exactly the bins.
    pub fn histogram(lo: f64, hi: f64, masses: Vec<f64>) -> Result<Self> {
        let k = masses.len();
        if k == 0 {
            return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
        }
        let w = (hi - lo) / k as f64;
        let reps = (0..k).map(|i| vec![lo + w * (i as f64 + 0.5)]).collect();
        Self::new(FiniteCodebook::new(reps, masses)?, vec![(lo, hi)])
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.bbox).all(|(v, (a, b))| *v >= *a && *v < *b)
    }
}

fn volumes_1d(cb: &FiniteCodebook, (lo, hi): (f64, f64)) -> Vec<f64> {
    let mut order: Vec<usize> = (0..cb.len()).collect();
    order.sort_by(|&a, &b| cb.decode(a)[0].total_cmp(&cb.decode(b)[0]));
    let mut out = vec![0.0; cb.len()];
    for (i, &k) in order.iter().enumerate() {
        let left = if i == 0 { lo } else { 0.5 * (cb.decode(order[i - 1])[0] + cb.decode(k)[0]) };
        let right = if i + 1 == order.len() { hi } else { 0.5 * (cb.decode(k)[0] + cb.decode(order[i + 1])[0]) };
        out[k] = (right.min(hi) - left.max(lo)).max(0.0);
    }
    out
}

fn volumes_mc(cb: &FiniteCodebook, bbox: &[(f64, f64)]) -> Vec<f64> {
    let mut rng = seeded(0x5eed_fac7);
    let total: f64 = bbox.iter().map(|(a, b)| b - a).product();
    let mut counts = vec![0usize; cb.len()];
    let mut x = vec![0.0; bbox.len()];
    for _ in 0..FACET_VOLUME_DRAWS {
        for (xi, (a, b)) in x.iter_mut().zip(bbox) {
            *xi = a + (b - a) * rng.random::<f64>();
        }
        counts[cb.encode(&x)] += 1;
    }
    counts.iter().map(|&c| total * c as f64 / FACET_VOLUME_DRAWS as f64).collect()
}

/// `log p(x) = log p(Z=f(x)) − log|F(f(x))|` inside the bounding box, `-inf`
/// outside.
pub fn cov_piecewise_constant(model: &PiecewiseConstant, x: &[f64]) -> Result<LogDensity> {
    check_dim(model.codebook.dim(), x.len())?;
    if !model.contains(x) {
        return Ok(CovReport::outside("x outside the bounding box").into());
    }
    let k = model.codebook.encode(x);
    Ok(CovReport::from_terms([("log p(Z=f(x))", model.codebook.priors[k].ln()), ("-log|F(f(x))|", -model.volumes[k].ln())])
        .into())
}
