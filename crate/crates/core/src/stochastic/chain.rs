//! Markov-chain encoders and decoders.

use super::kernels::{ConditionalKernel, GaussianKernel};
use crate::error::{check_dim, Error, Result};
use crate::numeric::density::{Density, DiagGaussian};
use crate::numeric::report::CovReport;
use crate::numeric::rng::StreamRng;

/// `Z_0 ≡ X`; `forward[t]` is `p(Z_{t+1} | Z_t)`, `reverse[t]` is
/// `p(Z_t | Z_{t+1})`, `terminal` is `p(Z_T)`.
pub struct MarkovChainModel {
    pub forward: Vec<Box<dyn ConditionalKernel>>,
    pub reverse: Vec<Box<dyn ConditionalKernel>>,
    pub terminal: Box<dyn Density>,
}

impl MarkovChainModel {
    pub fn new(
        forward: Vec<Box<dyn ConditionalKernel>>,
        reverse: Vec<Box<dyn ConditionalKernel>>,
        terminal: Box<dyn Density>,
    ) -> Result<Self> {
        if forward.is_empty() {
            return Err(Error::InvalidParameter("chain needs at least one step".into()));
        }
        check_dim(forward.len(), reverse.len())?;
        for t in 0..forward.len() {
            check_dim(forward[t].target_dim(), reverse[t].cond_dim())?;
            check_dim(forward[t].cond_dim(), reverse[t].target_dim())?;
            if t + 1 < forward.len() {
                check_dim(forward[t].target_dim(), forward[t + 1].cond_dim())?;
            }
        }
        check_dim(forward[forward.len() - 1].target_dim(), terminal.dim())?;
        Ok(Self { forward, reverse, terminal })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn data_dim(&self) -> usize {
        self.forward[0].cond_dim()
    }

    /// Encoder path `z_1..z_T` started at `x`.
    pub fn sample_path(&self, x: &[f64], rng: &mut StreamRng) -> Vec<Vec<f64>> {
        let mut path = Vec::with_capacity(self.len());
        let mut cur = x.to_vec();
        for k in &self.forward {
            cur = k.sample(&cur, rng);
            path.push(cur.clone());
        }
        path
    }
}

/// Markov-chain CoV along a given path `z_1..z_T`:
/// `log p(z_T) + Σ_t [log p(z_{t−1}|z_t) − log p(z_t|z_{t−1})]`, with the
/// per-step terms listed from the data side up.
pub fn cov_markov_chain_path(model: &MarkovChainModel, x: &[f64], path: &[Vec<f64>]) -> Result<CovReport> {
    check_dim(model.data_dim(), x.len())?;
    check_dim(model.len(), path.len())?;
    let t_max = model.len();
    let mut terms = Vec::with_capacity(1 + 2 * t_max);
    let label = if t_max == 1 { "log p(z)".to_string() } else { format!("log p(z_{t_max})") };
    terms.push((label, model.terminal.log_density(&path[t_max - 1])));
    for t in 0..t_max {
        let prev: &[f64] = if t == 0 { x } else { &path[t - 1] };
        let fwd = model.forward[t].log_density(&path[t], prev);
        if fwd == f64::NEG_INFINITY {
            return Err(Error::OutsideSupport(format!("forward step {} has zero density", t + 1)));
        }
        if fwd.is_nan() {
            return Err(Error::NonFinite(format!("forward step {}", t + 1)));
        }
        let rev = model.reverse[t].log_density(prev, &path[t]);
        let (lr, lf) = if t_max == 1 {
            ("log p(x|z)".to_string(), "-log p(z|x)".to_string())
        } else {
            (format!("log p(z_{t}|z_{})", t + 1), format!("-log p(z_{}|z_{t})", t + 1))
        };
        terms.push((lr, rev));
        terms.push((lf, -fwd));
    }
    Ok(CovReport::from_terms(terms))
}

/// Markov-chain CoV along one encoder path drawn from `rng`.
pub fn cov_markov_chain(model: &MarkovChainModel, x: &[f64], rng: &mut StreamRng) -> Result<CovReport> {
    let path = model.sample_path(x, rng);
    cov_markov_chain_path(model, x, &path)
}

/// Max minus min of the chain CoV over `n_paths` encoder paths.
pub fn markov_path_spread(model: &MarkovChainModel, x: &[f64], n_paths: usize, rng: &mut StreamRng) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..n_paths {
        let v = cov_markov_chain(model, x, rng)?.log_density;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(hi - lo)
}

/// 1-D chain with forward kernels `N(√(1−β_t) z, β_t)` applied to the target
/// `N(mean, std²)`, exact Gaussian reverse conditionals and the exact
/// terminal marginal.
pub fn gaussian_chain(mean: f64, std: f64, betas: &[f64]) -> Result<MarkovChainModel> {
    if !(std > 0.0) {
        return Err(Error::InvalidParameter("target std must be positive".into()));
    }
    let mut m = mean;
    let mut v = std * std;
    let mut forward: Vec<Box<dyn ConditionalKernel>> = Vec::new();
    let mut reverse: Vec<Box<dyn ConditionalKernel>> = Vec::new();
    for &b in betas {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidParameter(format!("beta {b} outside (0, 1)")));
        }
        let a = (1.0 - b).sqrt();
        let (m_next, v_next) = (a * m, a * a * v + b);
        let cov = a * v;
        let c = cov / v_next;
        forward.push(Box::new(GaussianKernel::linear(vec![vec![a]], vec![0.0], vec![b.sqrt()])?));
        reverse.push(Box::new(GaussianKernel::linear(
            vec![vec![c]],
            vec![m - c * m_next],
            vec![(v - c * cov).sqrt()],
        )?));
        m = m_next;
        v = v_next;
    }
    MarkovChainModel::new(forward, reverse, Box::new(DiagGaussian::new(vec![m], vec![v.sqrt()])?))
}
