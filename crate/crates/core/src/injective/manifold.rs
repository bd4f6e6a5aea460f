//! Flows on charted manifolds, conformal embeddings and noise-softened
//! flows.

use std::f64::consts::TAU;

use rand::Rng;

use super::{distance, norm, ON_MANIFOLD_RTOL};
use crate::error::{check_dim, Error, Result};
use crate::numeric::density::{Density, Discrete};
use crate::numeric::dual::Real;
use crate::numeric::linalg::{half_logdet_gram, logdet_lu};
use crate::numeric::map::{jacobian, DiffConfig, Map, Smooth};
use crate::numeric::report::{CovReport, LogDensity};
use crate::numeric::rng::StreamRng;

/// Relative tolerance of the conformality check `J_φᵀJ_φ = λ² I`.
pub const CONFORMAL_RTOL: f64 = 1e-6;

/// Chart `φ: R^C → R^D` of an embedded manifold with left-inverse `φ⁺`.
pub trait Chart: Map {
    /// `φ⁺(x)`; meaningful for `x` on the manifold.
    fn project(&self, x: &[f64]) -> Vec<f64>;

    /// Box of chart coordinates covered by this chart.
    fn domain(&self) -> Vec<(f64, f64)>;

    fn contains_code(&self, z: &[f64]) -> bool {
        z.iter().zip(self.domain()).all(|(v, (a, b))| *v >= a && *v < b)
    }

    /// `λ(z)` when the chart is conformal, `J_φᵀJ_φ = λ² I`.
    fn conformal_factor(&self, _z: &[f64]) -> Option<f64> {
        None
    }

    /// Volume of the charted region.
    fn volume(&self) -> Option<f64> {
        None
    }
}

/// Arc `θ ↦ R (cos θ, sin θ)` for `θ ∈ [lo, hi)`, `hi − lo ≤ 2π`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleChart {
    pub radius: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CircleChart {
    pub fn new(radius: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(radius > 0.0 && lo < hi && hi - lo <= TAU + 1e-12 && lo.is_finite()) {
            return Err(Error::InvalidParameter(format!("circle chart r={radius} on [{lo}, {hi})")));
        }
        Ok(Self { radius, lo, hi })
    }

    pub fn full(radius: f64) -> Result<Self> {
        Self::new(radius, 0.0, TAU)
    }
}

impl Smooth for CircleChart {
    fn dim_in(&self) -> usize {
        1
    }
    fn dim_out(&self) -> usize {
        2
    }
    fn eval<R: Real>(&self, z: &[R]) -> Vec<R> {
        vec![z[0].cos().scale(self.radius), z[0].sin().scale(self.radius)]
    }
}

impl Chart for CircleChart {
    /// Polar angle in `[lo, lo + 2π)`.
    fn project(&self, x: &[f64]) -> Vec<f64> {
        let a = x[1].atan2(x[0]);
        vec![self.lo + (a - self.lo).rem_euclid(TAU)]
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        vec![(self.lo, self.hi)]
    }
    fn conformal_factor(&self, _z: &[f64]) -> Option<f64> {
        Some(self.radius)
    }
    fn volume(&self) -> Option<f64> {
        Some(self.radius * (self.hi - self.lo))
    }
}

/// `R^C` embedded in itself; conformal with `λ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatChart {
    pub domain: Vec<(f64, f64)>,
}

impl Smooth for FlatChart {
    fn dim_in(&self) -> usize {
        self.domain.len()
    }
    fn dim_out(&self) -> usize {
        self.domain.len()
    }
    fn eval<R: Real>(&self, z: &[R]) -> Vec<R> {
        z.to_vec()
    }
}

impl Chart for FlatChart {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        self.domain.clone()
    }
    fn conformal_factor(&self, _z: &[f64]) -> Option<f64> {
        Some(1.0)
    }
    fn volume(&self) -> Option<f64> {
        Some(self.domain.iter().map(|(a, b)| b - a).product())
    }
}

/// `φ⁺(x)` if `x` is on the chart's image, with the distance error otherwise.
/// `Ok(None)` means `x` is on the manifold but outside this chart.
fn chart_code(chart: &dyn Chart, x: &[f64]) -> Result<Option<Vec<f64>>> {
    check_dim(chart.dim_out(), x.len())?;
    let z = chart.project(x);
    let d = distance(x, &chart.apply(&z));
    if !(d <= ON_MANIFOLD_RTOL * (1.0 + norm(x))) {
        return Err(Error::OffManifold { distance: d });
    }
    Ok(chart.contains_code(&z).then_some(z))
}

fn flow_terms(flow: &dyn Map, prior: &dyn Density, z: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_dim(flow.dim_in(), z.len())?;
    check_dim(flow.dim_out(), z.len())?;
    check_dim(prior.dim(), z.len())?;
    let u = flow.apply(z);
    let ld = logdet_lu(&jacobian(flow, z, DiffConfig::DUAL)?)?;
    Ok((u, ld))
}

/// `log p(x) = log p(Z=f(φ⁺x)) − ½ log|det(J_φᵀJ_φ)| + log|det J_f(φ⁺x)|`,
/// with `f` the encoder flow on chart coordinates.
pub fn cov_manifold_flow(chart: &dyn Chart, flow: &dyn Map, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    let Some(zt) = chart_code(chart, x)? else {
        return Ok(CovReport::outside("x outside the chart domain"));
    };
    let h = half_logdet_gram(&jacobian(chart, &zt, DiffConfig::DUAL)?)?;
    let (u, ld) = flow_terms(flow, prior, &zt)?;
    Ok(CovReport::from_terms([
        ("log p(Z=f(φ⁺(x)))", prior.log_density(&u)),
        ("-½ log|det(J_φᵀJ_φ)|", -h),
        ("log|det J_f|", ld),
    ]))
}

fn conformality_deviation(chart: &dyn Chart, z: &[f64]) -> Result<f64> {
    let lambda = chart
        .conformal_factor(z)
        .ok_or_else(|| Error::InvalidParameter("chart has no conformal factor".into()))?;
    let j = jacobian(chart, z, DiffConfig::DUAL)?;
    let g = j.transpose() * &j;
    let l2 = lambda * lambda;
    let mut dev: f64 = 0.0;
    for r in 0..g.nrows() {
        for c in 0..g.ncols() {
            let target = if r == c { l2 } else { 0.0 };
            dev = dev.max((g[(r, c)] - target).abs() / l2);
        }
    }
    Ok(dev)
}

/// `log p(x) = log p(Z=f(φ⁺x)) − C log λ(φ⁺x) + log|det J_f(φ⁺x)|`.
pub fn cov_conformal(chart: &dyn Chart, flow: &dyn Map, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    let Some(zt) = chart_code(chart, x)? else {
        return Ok(CovReport::outside("x outside the chart domain"));
    };
    let dev = conformality_deviation(chart, &zt)?;
    if !(dev <= CONFORMAL_RTOL) {
        return Err(Error::Conformality { deviation: dev });
    }
    let lambda = chart.conformal_factor(&zt).unwrap_or(f64::NAN);
    let (u, ld) = flow_terms(flow, prior, &zt)?;
    Ok(CovReport::from_terms([
        ("log p(Z=f(φ⁺(x)))", prior.log_density(&u)),
        ("-C log λ", -(zt.len() as f64) * lambda.ln()),
        ("log|det J_f|", ld),
    ]))
}

/// Conformal charts covering a manifold with chart priors. The assigner
/// `h(x)` picks the lowest-index chart whose domain holds `φ_k⁺(x)`.
pub struct ConformalAtlas {
    pub charts: Vec<Box<dyn Chart>>,
    pub priors: Discrete,
}

impl ConformalAtlas {
    pub fn new(charts: Vec<Box<dyn Chart>>, priors: Discrete) -> Result<Self> {
        if charts.is_empty() {
            return Err(Error::InvalidParameter("atlas needs at least one chart".into()));
        }
        check_dim(charts.len(), priors.probs.len())?;
        Ok(Self { charts, priors })
    }

    /// Upper and lower semicircles of radius `r` with equal priors.
    pub fn circle_halves(radius: f64) -> Result<Self> {
        use std::f64::consts::PI;
        Self::new(
            vec![Box::new(CircleChart::new(radius, 0.0, PI)?), Box::new(CircleChart::new(radius, PI, TAU)?)],
            Discrete::new(vec![0.5, 0.5])?,
        )
    }

    pub fn assign(&self, x: &[f64]) -> Option<usize> {
        self.charts.iter().position(|c| c.contains_code(&c.project(x)))
    }
}

/// Atlas version of [`cov_conformal`]: adds `log p(h(x))` and evaluates the
/// flow and prior of chart `h(x)`.
pub fn cov_conformal_vq(
    atlas: &ConformalAtlas,
    flows: &[&dyn Map],
    priors: &[&dyn Density],
    x: &[f64],
) -> Result<CovReport> {
    check_dim(atlas.charts.len(), flows.len())?;
    check_dim(atlas.charts.len(), priors.len())?;
    let Some(k) = atlas.assign(x) else {
        return Ok(CovReport::outside("no chart covers x"));
    };
    let inner = cov_conformal(atlas.charts[k].as_ref(), flows[k], priors[k], x)?;
    let mut terms = vec![("log p(k=h(x))".to_string(), atlas.priors.log_prob(k))];
    terms.extend(inner.terms.into_iter().map(|t| (t.label, t.value)));
    Ok(CovReport::from_terms(terms))
}

/// Chart prior `p(Z=z) = |det(J_φᵀJ_φ)|^{1/2} / V_M` that pushes forward to
/// the uniform law on the charted region.
pub struct ChartUniformPrior<'a> {
    chart: &'a dyn Chart,
    log_volume: f64,
    /// Upper bound of `|det(J_φᵀJ_φ)|^{1/2}` on the domain, for rejection
    /// sampling.
    envelope: f64,
}

impl<'a> ChartUniformPrior<'a> {
    /// The envelope is the largest volume factor on a 32-per-axis grid,
    /// inflated by 25%.
    pub fn new(chart: &'a dyn Chart) -> Result<Self> {
        let v = chart.volume().ok_or_else(|| Error::InvalidParameter("chart has no finite volume".into()))?;
        let dom = chart.domain();
        let c = dom.len();
        let n = 32usize;
        let mut env: f64 = 0.0;
        for idx in 0..n.pow(c as u32) {
            let mut rem = idx;
            let z: Vec<f64> = dom
                .iter()
                .map(|(a, b)| {
                    let i = rem % n;
                    rem /= n;
                    a + (b - a) * (i as f64 + 0.5) / n as f64
                })
                .collect();
            env = env.max(half_logdet_gram(&jacobian(chart, &z, DiffConfig::DUAL)?)?.exp());
        }
        Ok(Self { chart, log_volume: v.ln(), envelope: 1.25 * env })
    }
}

impl Density for ChartUniformPrior<'_> {
    fn dim(&self) -> usize {
        self.chart.dim_in()
    }
    fn log_density(&self, z: &[f64]) -> f64 {
        if !self.chart.contains_code(z) {
            return f64::NEG_INFINITY;
        }
        match jacobian(self.chart, z, DiffConfig::DUAL).and_then(|j| half_logdet_gram(&j)) {
            Ok(h) => h - self.log_volume,
            Err(_) => f64::NAN,
        }
    }
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let dom = self.chart.domain();
        loop {
            let z: Vec<f64> = dom.iter().map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect();
            let h = half_logdet_gram(&jacobian(self.chart, &z, DiffConfig::DUAL).expect("chart jacobian"))
                .map(f64::exp)
                .unwrap_or(0.0);
            if rng.random::<f64>() * self.envelope < h {
                return z;
            }
        }
    }
    fn bounds(&self) -> Option<Vec<(f64, f64)>> {
        Some(self.chart.domain())
    }
}

/// Flow `f(x; σ)` conditioned on the training-noise level.
pub trait SoftFlow: Send + Sync {
    fn dim(&self) -> usize;
    fn encode<R: Real>(&self, x: &[R], sigma: f64) -> Vec<R>;
}

/// Line manifold `x₂ = 0` with noise along `x₂`: `f(x; σ) = (x₁, x₂/σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LineSoftFlow;

impl SoftFlow for LineSoftFlow {
    fn dim(&self) -> usize {
        2
    }
    fn encode<R: Real>(&self, x: &[R], sigma: f64) -> Vec<R> {
        vec![x[0], x[1].scale(1.0 / sigma)]
    }
}

struct AtSigma<'a, F: SoftFlow> {
    flow: &'a F,
    sigma: f64,
}

impl<F: SoftFlow> Smooth for AtSigma<'_, F> {
    fn dim_in(&self) -> usize {
        self.flow.dim()
    }
    fn dim_out(&self) -> usize {
        self.flow.dim()
    }
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
        self.flow.encode(x, self.sigma)
    }
}

/// `log p(x) ≈ log p(Z=f(x; σ_min)) + log|det ∂f/∂x (x; σ_min)|`.
pub fn cov_softflow<F: SoftFlow>(flow: &F, prior: &dyn Density, x: &[f64], sigma_min: f64) -> Result<LogDensity> {
    if !(sigma_min > 0.0 && sigma_min.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma_min must be positive, got {sigma_min}")));
    }
    check_dim(flow.dim(), x.len())?;
    check_dim(prior.dim(), x.len())?;
    let m = AtSigma { flow, sigma: sigma_min };
    let z = m.eval(x);
    let ld = logdet_lu(&jacobian(&m, x, DiffConfig::DUAL)?)?;
    Ok(CovReport::from_terms([("log p(Z=f(x;σ))", prior.log_density(&z)), ("log|det J_f(x;σ)|", ld)]).into())
}

/// `(σ, log p(x))` for each `σ` in `sigmas`; how the on-manifold value moves
/// as the noise floor shrinks.
pub fn softflow_curve<F: SoftFlow>(flow: &F, prior: &dyn Density, x: &[f64], sigmas: &[f64]) -> Result<Vec<(f64, f64)>> {
    sigmas.iter().map(|&s| Ok((s, cov_softflow(flow, prior, x, s)?.value))).collect()
}
