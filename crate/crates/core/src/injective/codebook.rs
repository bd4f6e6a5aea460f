//! Finite codebooks: K-means and vector-quantized bottlenecks.

use serde::{Deserialize, Serialize};

use super::{distance, norm, ON_MANIFOLD_RTOL};
use crate::analytic::circular_diff;
use crate::error::{check_dim, Error, Result};

/// Pre-code embedding `φ` of a VQ codebook. Only these analytic maps are
/// supported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreCodeEmbedding {
    Identity,
    /// `φ(x) = E x`, row-major.
    Linear { matrix: Vec<Vec<f64>> },
    /// Polar angle of a 2-D point, compared with circular distance.
    Angle,
}

impl PreCodeEmbedding {
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity => x.to_vec(),
            Self::Linear { matrix } => matrix.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect(),
            Self::Angle => vec![crate::analytic::arg(x)],
        }
    }

    fn dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Self::Angle => circular_diff(a[0], b[0]).powi(2),
            _ => a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum(),
        }
    }
}

/// Lift `γ` from pre-code space to data space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lift {
    Identity,
    /// `γ(z) = L z`, row-major.
    Linear { matrix: Vec<Vec<f64>> },
    /// `γ(θ) = r (cos θ, sin θ)`.
    Circle { radius: f64 },
}

impl Lift {
    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity => z.to_vec(),
            Self::Linear { matrix } => matrix.iter().map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum()).collect(),
            Self::Circle { radius } => vec![radius * z[0].cos(), radius * z[0].sin()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqCodes {
    pub embedding: PreCodeEmbedding,
    pub pre_codes: Vec<Vec<f64>>,
}

/// `K` representatives with code priors. The encoder is the nearest
/// representative (in pre-code space for the VQ variant); ties go to the
/// lowest index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteCodebook {
    pub representatives: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vq: Option<VqCodes>,
}

impl FiniteCodebook {
    pub fn new(representatives: Vec<Vec<f64>>, priors: Vec<f64>) -> Result<Self> {
        Self { representatives, priors, vq: None }.validated()
    }

    /// VQ codebook with representatives `γ(ẑ_k)`.
    pub fn vq(embedding: PreCodeEmbedding, pre_codes: Vec<Vec<f64>>, lift: &Lift, priors: Vec<f64>) -> Result<Self> {
        let representatives = pre_codes.iter().map(|z| lift.lift(z)).collect();
        Self { representatives, priors, vq: Some(VqCodes { embedding, pre_codes }) }.validated()
    }

    /// Uniform priors.
    pub fn uniform(representatives: Vec<Vec<f64>>) -> Result<Self> {
        let k = representatives.len().max(1);
        Self::new(representatives, vec![1.0 / k as f64; k])
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cb: Self = serde_json::from_str(s).map_err(|e| Error::InvalidParameter(format!("codebook JSON: {e}")))?;
        cb.validated()
    }

    pub fn validated(mut self) -> Result<Self> {
        let k = self.representatives.len();
        if k == 0 {
            return Err(Error::InvalidParameter("codebook needs at least one representative".into()));
        }
        check_dim(k, self.priors.len())?;
        let d = self.representatives[0].len();
        for r in &self.representatives {
            check_dim(d, r.len())?;
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("representative".into()));
            }
        }
        if self.priors.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidParameter("code priors must be non-negative".into()));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("code priors sum to {total}")));
        }
        self.priors.iter_mut().for_each(|p| *p /= total);
        if let Some(vq) = &self.vq {
            check_dim(k, vq.pre_codes.len())?;
        }
        for i in 0..k {
            for j in 0..i {
                if self.representatives[i] == self.representatives[j] {
                    return Err(Error::InvalidParameter(format!("representatives {j} and {i} coincide")));
                }
            }
            if self.encode(&self.representatives[i]) != i {
                return Err(Error::InvalidParameter(format!("representative {i} lies outside its own facet")));
            }
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.representatives[0].len()
    }

    /// `f(x) = argmin_k ‖x − x̂_k‖`, or `argmin_k ‖φ(x) − ẑ_k‖` for VQ.
    pub fn encode(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        match &self.vq {
            None => {
                for (k, r) in self.representatives.iter().enumerate() {
                    let d: f64 = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best.1 {
                        best = (k, d);
                    }
                }
            }
            Some(vq) => {
                let e = vq.embedding.embed(x);
                for (k, z) in vq.pre_codes.iter().enumerate() {
                    let d = vq.embedding.dist2(&e, z);
                    if d < best.1 {
                        best = (k, d);
                    }
                }
            }
        }
        best.0
    }

    pub fn decode(&self, k: usize) -> &[f64] {
        &self.representatives[k]
    }
}

/// Mass attributed to `x` by a finite-code model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansDensity {
    pub code: usize,
    /// `log p(Z=f(x))` when `x` is the representative, `-inf` otherwise.
    #[serde(with = "crate::numeric::report::log_f64")]
    pub log_mass: f64,
    pub on_manifold: bool,
}

/// Mixture-of-deltas density: the mass `p(Z=f(x))` sits at `x̂_{f(x)}` and
/// every other point gets zero.
pub fn cov_kmeans(codebook: &FiniteCodebook, x: &[f64]) -> Result<KmeansDensity> {
    check_dim(codebook.dim(), x.len())?;
    let k = codebook.encode(x);
    let on = distance(x, codebook.decode(k)) <= ON_MANIFOLD_RTOL * (1.0 + norm(x));
    let log_mass = if on { codebook.priors[k].ln() } else { f64::NEG_INFINITY };
    Ok(KmeansDensity { code: k, log_mass, on_manifold: on })
}

/// Facet priors estimated by counting assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetPrior {
    pub counts: Vec<usize>,
    pub probs: Vec<f64>,
}

impl FacetPrior {
    /// Binomial standard error of each estimated prior.
    pub fn std_errors(&self) -> Vec<f64> {
        let n: usize = self.counts.iter().sum();
        self.probs.iter().map(|p| (p * (1.0 - p) / n.max(1) as f64).sqrt()).collect()
    }
}

/// `p(Z=k) = (N_k + s) / (N + K s)` with Laplace smoothing `s` (0 counts raw).
pub fn estimate_facet_prior(codebook: &FiniteCodebook, samples: &[Vec<f64>], smoothing: f64) -> Result<FacetPrior> {
    if !(smoothing >= 0.0) {
        return Err(Error::InvalidParameter("smoothing must be non-negative".into()));
    }
    if samples.is_empty() && smoothing == 0.0 {
        return Err(Error::InvalidParameter("no samples to count".into()));
    }
    let mut counts = vec![0usize; codebook.len()];
    for x in samples {
        check_dim(codebook.dim(), x.len())?;
        counts[codebook.encode(x)] += 1;
    }
    let denom = samples.len() as f64 + smoothing * codebook.len() as f64;
    let probs = counts.iter().map(|&c| (c as f64 + smoothing) / denom).collect();
    Ok(FacetPrior { counts, probs })
}
