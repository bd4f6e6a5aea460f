//! Conditional normalizing flows (noise outsourcing) and augmented flows.

use serde::{Deserialize, Serialize};

use super::cov::log_mean_exp_with_se;
use super::kernels::{AffineFn, ConditionalKernel};
use crate::bijective::{cov_bijective, FlowMap};
use crate::error::{check_dim, Error, Result};
use crate::numeric::density::Density;
use crate::numeric::dual::Real;
use crate::numeric::linalg::logdet_lu;
use crate::numeric::map::{jacobian, DiffConfig, Smooth};
use crate::numeric::report::{CovReport, LogDensity};
use crate::numeric::rng::StreamRng;

/// `y = h(s; c)`, invertible in the noise `s` for every condition `c`.
pub trait ConditionalFlow: Send + Sync {
    fn dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn forward<R: Real>(&self, s: &[R], cond: &[f64]) -> Vec<R>;
    fn inverse(&self, y: &[f64], cond: &[f64]) -> Option<Vec<f64>>;
}

/// `y = exp(a(c)) ⊙ s + b(c)` with affine `a`, `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineConditionalFlow {
    pub log_scale: AffineFn,
    pub shift: AffineFn,
}

impl AffineConditionalFlow {
    pub fn new(log_scale: AffineFn, shift: AffineFn) -> Result<Self> {
        check_dim(log_scale.dim_out(), shift.dim_out())?;
        check_dim(log_scale.dim_in(), shift.dim_in())?;
        Ok(Self { log_scale, shift })
    }
}

impl ConditionalFlow for AffineConditionalFlow {
    fn dim(&self) -> usize {
        self.shift.dim_out()
    }
    fn cond_dim(&self) -> usize {
        self.shift.dim_in()
    }
    fn forward<R: Real>(&self, s: &[R], cond: &[f64]) -> Vec<R> {
        let a = self.log_scale.eval(cond);
        let b = self.shift.eval(cond);
        s.iter().zip(a.iter().zip(&b)).map(|(&v, (&a, &b))| v.scale(a.exp()) + R::cst(b)).collect()
    }
    fn inverse(&self, y: &[f64], cond: &[f64]) -> Option<Vec<f64>> {
        let a = self.log_scale.eval(cond);
        let b = self.shift.eval(cond);
        Some(y.iter().zip(a.iter().zip(&b)).map(|(v, (a, b))| (v - b) * (-a).exp()).collect())
    }
}

/// A conditional flow with its condition fixed, as a differentiable map of
/// the noise.
struct Section<'a, F: ConditionalFlow> {
    flow: &'a F,
    cond: &'a [f64],
}

impl<F: ConditionalFlow> Smooth for Section<'_, F> {
    fn dim_in(&self) -> usize {
        self.flow.dim()
    }
    fn dim_out(&self) -> usize {
        self.flow.dim()
    }
    fn eval<R: Real>(&self, s: &[R]) -> Vec<R> {
        self.flow.forward(s, self.cond)
    }
}

const TERM_NOISE: &str = "log p(S=h⁻¹(y;c))";
const TERM_JAC: &str = "-log|det ∂h/∂s|";

fn conditional_terms<F: ConditionalFlow>(flow: &F, noise: &dyn Density, y: &[f64], cond: &[f64]) -> Result<(f64, f64)> {
    check_dim(flow.dim(), y.len())?;
    check_dim(flow.cond_dim(), cond.len())?;
    check_dim(flow.dim(), noise.dim())?;
    let s = flow
        .inverse(y, cond)
        .ok_or_else(|| Error::OutsideSupport("target outside the conditional flow image".into()))?;
    let j = jacobian(&Section { flow, cond }, &s, DiffConfig::DUAL)?;
    Ok((noise.log_density(&s), -logdet_lu(&j)?))
}

/// `log p(y|c) = log p(S = h⁻¹(y;c)) − log|det ∂h/∂s|` at `s = h⁻¹(y;c)`.
pub fn cov_conditional_bijective<F: ConditionalFlow>(flow: &F, noise: &dyn Density, y: &[f64], cond: &[f64]) -> Result<LogDensity> {
    let (a, b) = conditional_terms(flow, noise, y, cond)?;
    Ok(CovReport::from_terms([(TERM_NOISE, a), (TERM_JAC, b)]).into())
}

/// A conditional flow with its noise law, usable as a kernel.
pub struct FlowKernel<F: ConditionalFlow> {
    pub flow: F,
    pub noise: Box<dyn Density>,
}

impl<F: ConditionalFlow> ConditionalKernel for FlowKernel<F> {
    fn target_dim(&self) -> usize {
        self.flow.dim()
    }
    fn cond_dim(&self) -> usize {
        self.flow.cond_dim()
    }
    fn log_density(&self, target: &[f64], cond: &[f64]) -> f64 {
        cov_conditional_bijective(&self.flow, self.noise.as_ref(), target, cond).map_or(f64::NEG_INFINITY, |l| l.value)
    }
    fn sample(&self, cond: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let s = self.noise.sample(rng);
        self.flow.forward(&s, cond)
    }
}

/// Decoder `x = g(s_x; z)` and encoder `z = f(s_z; x)` with their noise laws.
pub struct ConditionalFlowPair<G: ConditionalFlow, F: ConditionalFlow> {
    pub decoder: FlowKernel<G>,
    pub encoder: FlowKernel<F>,
}

/// Bayesian CoV with both conditionals expanded by noise outsourcing.
pub fn cov_conditional_nf_pair<G: ConditionalFlow, F: ConditionalFlow>(
    pair: &ConditionalFlowPair<G, F>,
    prior: &dyn Density,
    x: &[f64],
    z: &[f64],
) -> Result<CovReport> {
    check_dim(prior.dim(), z.len())?;
    let (dn, dj) = conditional_terms(&pair.decoder.flow, pair.decoder.noise.as_ref(), x, z)?;
    let (en, ej) = conditional_terms(&pair.encoder.flow, pair.encoder.noise.as_ref(), z, x)?;
    if en == f64::NEG_INFINITY {
        return Err(Error::OutsideSupport("z outside the encoder support at x".into()));
    }
    Ok(CovReport::from_terms([
        ("log p(z)", prior.log_density(z)),
        ("log p(S_x=g⁻¹(x;z))", dn),
        ("-log|det ∂g/∂s_x|", dj),
        ("-log p(S_z=f⁻¹(z;x))", -en),
        ("log|det ∂f/∂s_z|", -ej),
    ]))
}

/// Importance-sampled augmented-flow marginal with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEstimate {
    pub log_density: LogDensity,
    pub std_error: f64,
    pub k: usize,
}

/// `log (1/K) Σ_k p(x, y_k) / p*(y_k)` with `y_k ~ p*(Y)` and the joint
/// density of `[x, y]` from the bijective CoV of `flow`.
pub fn cov_augmented(
    flow: &FlowMap,
    prior: &dyn Density,
    noise: &dyn Density,
    x: &[f64],
    k: usize,
    rng: &mut StreamRng,
) -> Result<AugmentedEstimate> {
    if k == 0 {
        return Err(Error::InvalidParameter("augmented estimator needs K >= 1".into()));
    }
    check_dim(flow.dim, x.len() + noise.dim())?;
    let mut logs = Vec::with_capacity(k);
    let mut xy = x.to_vec();
    for _ in 0..k {
        let y = noise.sample(rng);
        xy.truncate(x.len());
        xy.extend_from_slice(&y);
        logs.push(cov_bijective(flow, prior, &xy)?.log_density - noise.log_density(&y));
    }
    let (v, se) = if k == 1 { (logs[0], f64::INFINITY) } else { log_mean_exp_with_se(&logs) };
    Ok(AugmentedEstimate { log_density: LogDensity::plain(v), std_error: se, k })
}
