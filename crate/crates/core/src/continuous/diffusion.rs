//! Diffusion models: discrete DDPM schedules and the variance-preserving
//! SDE with its probability-flow ODE.

use serde::{Deserialize, Serialize};

use super::ode::VectorField;
use crate::error::{Error, Result};
use crate::numeric::dual::Real;
use crate::stochastic::chain::{gaussian_chain, MarkovChainModel};
use crate::stochastic::kernels::GaussianKernel;

/// `β_1..β_T` in `(0, 1)`; serialized as a bare JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DdpmSchedule {
    betas: Vec<f64>,
}

impl TryFrom<Vec<f64>> for DdpmSchedule {
    type Error = Error;
    fn try_from(b: Vec<f64>) -> Result<Self> {
        Self::new(b)
    }
}

impl From<DdpmSchedule> for Vec<f64> {
    fn from(s: DdpmSchedule) -> Self {
        s.betas
    }
}

impl DdpmSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidParameter("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidParameter(format!("beta {b} outside (0, 1)")));
        }
        Ok(Self { betas })
    }

    pub fn constant(beta: f64, steps: usize) -> Result<Self> {
        Self::new(vec![beta; steps])
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidParameter(format!("schedule file: {e}")))
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::InvalidParameter(format!("step {t} outside 1..={}", self.len())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    /// `ᾱ_t = Π_{τ≤t} (1 − β_τ)`, accumulated in log space.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[..t].iter().map(|b| (-b).ln_1p()).sum::<f64>().exp())
    }

    /// `p(z_t | z_{t−1}) = N(√(1−β_t) z_{t−1}, β_t I)` on `R^dim`.
    pub fn forward_kernel(&self, t: usize, dim: usize) -> Result<GaussianKernel> {
        let b = self.beta(t)?;
        isotropic(dim, (1.0 - b).sqrt(), b.sqrt())
    }

    /// `p(z_t | x) = N(√ᾱ_t x, (1 − ᾱ_t) I)` on `R^dim`.
    pub fn perturbation_kernel(&self, t: usize, dim: usize) -> Result<GaussianKernel> {
        let a = self.alpha_bar(t)?;
        isotropic(dim, a.sqrt(), (1.0 - a).sqrt())
    }

    /// The chain of forward kernels on a 1-D Gaussian target together with
    /// its exact reverse conditionals and terminal marginal.
    pub fn exact_gaussian_chain(&self, mean: f64, std: f64) -> Result<MarkovChainModel> {
        gaussian_chain(mean, std, &self.betas)
    }
}

fn isotropic(dim: usize, scale: f64, std: f64) -> Result<GaussianKernel> {
    let a = (0..dim).map(|i| (0..dim).map(|j| if i == j { scale } else { 0.0 }).collect()).collect();
    GaussianKernel::linear(a, vec![0.0; dim], vec![std; dim])
}

/// `β(t)` of the continuous-time SDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    Constant { beta: f64 },
    /// `β(t) = β₀ + (β₁ − β₀)·t/T`.
    Linear { beta0: f64, beta1: f64, horizon: f64 },
}

impl BetaSchedule {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { beta } => beta,
            Self::Linear { beta0, beta1, horizon } => beta0 + (beta1 - beta0) * t / horizon,
        }
    }

    /// `B(t) = ∫₀ᵗ β`.
    pub fn integral(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { beta } => beta * t,
            Self::Linear { beta0, beta1, horizon } => beta0 * t + 0.5 * (beta1 - beta0) * t * t / horizon,
        }
    }
}

/// Score field `s(t, z) ≈ ∇_z log p_t(z)`.
pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;
    fn score<R: Real>(&self, t: f64, z: &[R]) -> Vec<R>;
}

/// Closed-form score of a diagonal Gaussian target diffused by the
/// variance-preserving SDE: `p_t = N(μ e^{−B/2}, σ² e^{−B} + 1 − e^{−B})`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    pub beta: BetaSchedule,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianScore {
    pub fn moments(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let b = self.beta.integral(t);
        let k = (-0.5 * b).exp();
        let m = self.mean.iter().map(|m| m * k).collect();
        let v = self.std.iter().map(|s| s * s * k * k + 1.0 - k * k).collect();
        (m, v)
    }
}

impl ScoreField for GaussianScore {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn score<R: Real>(&self, t: f64, z: &[R]) -> Vec<R> {
        let (m, v) = self.moments(t);
        z.iter().zip(m.iter().zip(&v)).map(|(&zi, (&m, &v))| -(zi - R::cst(m)).scale(1.0 / v)).collect()
    }
}

/// `F(t, z) = −½ a(t) z − ½ g²(t)·s(t, z)` for the SDE
/// `dz = −½ a(t) z dt + g(t) dW`.
pub struct ProbabilityFlow<S: ScoreField> {
    pub drift_rate: BetaSchedule,
    pub diffusion_sq: BetaSchedule,
    pub score: S,
}

/// Probability-flow field of the variance-preserving SDE with rate `β(t)`.
pub fn probability_flow_ode<S: ScoreField>(beta: BetaSchedule, score: S) -> ProbabilityFlow<S> {
    ProbabilityFlow { drift_rate: beta, diffusion_sq: beta, score }
}

impl<S: ScoreField> VectorField for ProbabilityFlow<S> {
    fn dim(&self) -> usize {
        self.score.dim()
    }
    fn eval<R: Real>(&self, t: f64, z: &[R]) -> Vec<R> {
        let a = self.drift_rate.at(t);
        let g2 = self.diffusion_sq.at(t);
        if g2 == 0.0 {
            return z.iter().map(|v| v.scale(-0.5 * a)).collect();
        }
        let s = self.score.score(t, z);
        z.iter().zip(s).map(|(&v, s)| v.scale(-0.5 * a) - s.scale(0.5 * g2)).collect()
    }
}
