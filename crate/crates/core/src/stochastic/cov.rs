//! Marginalization, mixture, Bayesian and ELBO evaluators.

use super::kernels::ConditionalKernel;
use crate::error::{check_dim, Error, Result};
use crate::numeric::density::{log_mean_exp, log_sum_exp, Density, DiagGaussian, Gmm};
use crate::numeric::integrate::{mean_and_se, quad_integrate_1d, quad_integrate_2d};
use crate::numeric::report::{CovReport, LogDensity};
use crate::numeric::rng::StreamRng;

pub const TERM_CODE_PRIOR: &str = "log p(z)";
pub const TERM_DECODER: &str = "log p(x|z)";
pub const TERM_ENCODER: &str = "-log p(z|x)";

/// Absolute tolerance of the quadrature backend.
pub const MARGINAL_QUAD_TOL: f64 = 1e-10;

/// How `E_{z~p(Z)}[p(x|z)]` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginalization {
    /// Quadrature for code dimension ≤ 2 (over the prior's bounds), Monte
    /// Carlo with this many draws otherwise.
    Auto { n: usize },
    MonteCarlo { n: usize },
    Quadrature { tol: f64 },
}

/// Marginal log-density with its Monte Carlo standard error (zero for
/// quadrature).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEstimate {
    pub log_density: LogDensity,
    /// Standard error on the log scale (delta method).
    pub std_error: f64,
    pub n: usize,
}

/// `log E_{z~p(Z)} p(x|z)`.
pub fn cov_decoder_marginalization(
    decoder: &dyn ConditionalKernel,
    prior: &dyn Density,
    x: &[f64],
    method: Marginalization,
    rng: &mut StreamRng,
) -> Result<MarginalEstimate> {
    check_dim(decoder.target_dim(), x.len())?;
    check_dim(decoder.cond_dim(), prior.dim())?;
    let c = prior.dim();
    let quad_tol = match method {
        Marginalization::Quadrature { tol } => Some(tol),
        Marginalization::Auto { .. } if c <= 2 && prior.bounds().is_some() => Some(MARGINAL_QUAD_TOL),
        _ => None,
    };
    if let Some(tol) = quad_tol {
        let b = prior
            .bounds()
            .ok_or_else(|| Error::InvalidParameter("quadrature needs a bounded prior".into()))?;
        let joint = |z: &[f64]| {
            let v = prior.log_density(z) + decoder.log_density(x, z);
            if v == f64::NEG_INFINITY {
                0.0
            } else {
                v.exp()
            }
        };
        let p = match c {
            1 => quad_integrate_1d(|u| joint(&[u]), b[0].0, b[0].1, tol)?,
            2 => quad_integrate_2d(|u, v| joint(&[u, v]), b[0], b[1], tol)?,
            _ => return Err(Error::InvalidParameter(format!("quadrature over {c} code dimensions"))),
        };
        return Ok(MarginalEstimate { log_density: LogDensity::plain(p.max(0.0).ln()), std_error: 0.0, n: 0 });
    }
    let n = match method {
        Marginalization::Auto { n } | Marginalization::MonteCarlo { n } => n,
        Marginalization::Quadrature { .. } => unreachable!(),
    };
    if n < 2 {
        return Err(Error::InvalidParameter("marginalization needs n >= 2".into()));
    }
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let z = prior.sample(rng);
            decoder.log_density(x, &z)
        })
        .collect();
    if logs.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("decoder log-density".into()));
    }
    let lme = log_mean_exp(&logs);
    if lme == f64::NEG_INFINITY {
        return Ok(MarginalEstimate { log_density: LogDensity::plain(lme), std_error: 0.0, n });
    }
    let w: Vec<f64> = logs.iter().map(|v| (v - lme).exp()).collect();
    let (_, se) = mean_and_se(&w);
    Ok(MarginalEstimate { log_density: LogDensity::plain(lme), std_error: se, n })
}

/// `log Σ_k p(k) N(x | μ_k, diag σ_k²)`.
pub fn cov_gmm(weights: &[f64], means: &[Vec<f64>], stds: &[Vec<f64>], x: &[f64]) -> Result<CovReport> {
    let gmm = build_gmm(weights, means, stds)?;
    check_dim(gmm.dim(), x.len())?;
    Ok(CovReport::from_terms([("log Σ_k p(k) N(x|μ_k,Σ_k)", log_sum_exp(&gmm.log_joint(x)))]))
}

/// `p(k | x)` by Bayes' rule.
pub fn gmm_posterior(weights: &[f64], means: &[Vec<f64>], stds: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>> {
    let gmm = build_gmm(weights, means, stds)?;
    check_dim(gmm.dim(), x.len())?;
    Ok(gmm.posterior(x))
}

fn build_gmm(weights: &[f64], means: &[Vec<f64>], stds: &[Vec<f64>]) -> Result<Gmm> {
    check_dim(weights.len(), means.len())?;
    check_dim(weights.len(), stds.len())?;
    let comps = means
        .iter()
        .zip(stds)
        .map(|(m, s)| DiagGaussian::new(m.clone(), s.clone()))
        .collect::<Result<Vec<_>>>()?;
    Gmm::new(weights.to_vec(), comps)
}

/// `log p(x) = log p(z) + log p(x|z) − log p(z|x)`.
pub fn cov_bayes(
    prior: &dyn Density,
    decoder: &dyn ConditionalKernel,
    encoder: &dyn ConditionalKernel,
    x: &[f64],
    z: &[f64],
) -> Result<CovReport> {
    check_dim(prior.dim(), z.len())?;
    check_dim(decoder.target_dim(), x.len())?;
    check_dim(decoder.cond_dim(), z.len())?;
    check_dim(encoder.target_dim(), z.len())?;
    check_dim(encoder.cond_dim(), x.len())?;
    let le = encoder.log_density(z, x);
    if le == f64::NEG_INFINITY {
        return Err(Error::OutsideSupport("z outside the encoder support at x".into()));
    }
    if le.is_nan() {
        return Err(Error::NonFinite("encoder log-density".into()));
    }
    Ok(CovReport::from_terms([
        (TERM_CODE_PRIOR, prior.log_density(z)),
        (TERM_DECODER, decoder.log_density(x, z)),
        (TERM_ENCODER, -le),
    ]))
}

/// Max minus min of the Bayesian CoV over `n` encoder draws.
pub fn bayes_spread(
    prior: &dyn Density,
    decoder: &dyn ConditionalKernel,
    encoder: &dyn ConditionalKernel,
    x: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..n {
        let z = encoder.sample(x, rng);
        let v = cov_bayes(prior, decoder, encoder, x, &z)?.log_density;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(hi - lo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboEstimate {
    pub elbo: f64,
    pub std_error: f64,
    /// `log p(x) − ELBO` when the true log-density is supplied.
    pub gap: Option<f64>,
}

/// `E_{z~p(Z|x)}[log p(z) + log p(x|z) − log p(z|x)]` by Monte Carlo.
pub fn elbo(
    prior: &dyn Density,
    decoder: &dyn ConditionalKernel,
    encoder: &dyn ConditionalKernel,
    x: &[f64],
    log_px: Option<f64>,
    n: usize,
    rng: &mut StreamRng,
) -> Result<ElboEstimate> {
    if n < 2 {
        return Err(Error::InvalidParameter("elbo needs n >= 2".into()));
    }
    let vals = (0..n)
        .map(|_| {
            let z = encoder.sample(x, rng);
            cov_bayes(prior, decoder, encoder, x, &z).map(|r| r.log_density)
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ELBO integrand".into()));
    }
    let (m, se) = mean_and_se(&vals);
    Ok(ElboEstimate { elbo: m, std_error: se, gap: log_px.map(|l| l - m) })
}

/// Variance-based inconsistency score with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlVarianceScore {
    pub score: f64,
    pub std_error: f64,
}

const KL_BATCHES: usize = 20;

/// `Var_{z~p(Z|x)}[w(z)] / (2 p̂(x)²)` with `w(z) = p(z) p(x|z) / p(z|x)`
/// and `p̂(x)` the mean of the same draws. Second-order estimate of the
/// KL gap; zero for self-consistent models.
pub fn kl_variance_diagnostic(
    prior: &dyn Density,
    decoder: &dyn ConditionalKernel,
    encoder: &dyn ConditionalKernel,
    x: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> Result<KlVarianceScore> {
    if n < 2 {
        return Err(Error::InvalidParameter("kl_variance_diagnostic needs n >= 2".into()));
    }
    let logs = (0..n)
        .map(|_| {
            let z = encoder.sample(x, rng);
            cov_bayes(prior, decoder, encoder, x, &z).map(|r| r.log_density)
        })
        .collect::<Result<Vec<_>>>()?;
    let score_of = |v: &[f64]| {
        // Scale-free: divide by the sample mean before squaring.
        let m = log_mean_exp(v);
        let w: Vec<f64> = v.iter().map(|l| (l - m).exp()).collect();
        let k = w.len() as f64;
        let var = w.iter().map(|u| (u - 1.0).powi(2)).sum::<f64>() / (k - 1.0);
        var / 2.0
    };
    let score = score_of(&logs);
    let std_error = if n >= 2 * KL_BATCHES {
        let b = n / KL_BATCHES;
        let batch: Vec<f64> = (0..KL_BATCHES).map(|i| score_of(&logs[i * b..(i + 1) * b])).collect();
        mean_and_se(&batch).1
    } else {
        f64::INFINITY
    };
    Ok(KlVarianceScore { score, std_error })
}

/// Log-mean-exp estimate with a delta-method standard error on the log scale.
pub fn log_mean_exp_with_se(logs: &[f64]) -> (f64, f64) {
    let lme = log_mean_exp(logs);
    if !lme.is_finite() {
        return (lme, f64::INFINITY);
    }
    let w: Vec<f64> = logs.iter().map(|v| (v - lme).exp()).collect();
    (lme, mean_and_se(&w).1)
}
