//! JSON model files: one schema with a `"type"` discriminator per family,
//! plus evaluation, sampling and self-checks for each.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{AnisotropicGaussian, DonutModels, DonutTarget, GaussianStochastic, DEFAULT_ALPHA0};
use crate::bijective::{cov_bijective, FlowMap, Layer, TriangularMap};
use crate::diagnostics::{
    check_deterministic_consistency, check_normalization, check_stochastic_consistency, codebook_mass, ConsistencyReport,
};
use crate::error::{check_dim, Error, Result};
use crate::injective::{cov_autoencoder_at, cov_kmeans, ArgEncoder, CircleDecoder, FiniteCodebook, InjectivePair};
use crate::numeric::density::{DiagGaussian, Discrete, Gmm, StandardNormal, UniformBox};
use crate::numeric::density::Density;
use crate::numeric::linalg::logdet_lu;
use crate::numeric::map::{jacobian, AffineMap, DiffConfig, Map};
use crate::numeric::report::CovReport;
use crate::numeric::rng::{seeded, std_normal, StreamRng};
use crate::split::{cov_split, DonutSplit, GaussianSplit, SplitModel};
use crate::stochastic::{cov_bayes, ConditionalKernel, GaussianKernel, VaeModel};

/// Absolute tolerance of exact checks (round trips, joint densities,
/// agreement with a known target).
pub const CHECK_TOL: f64 = 1e-9;
/// Standard errors allowed between the normalization estimate and 1.
pub const NORMALIZATION_SIGMAS: f64 = 4.0;
/// Points used by the round-trip and target-agreement checks.
const CHECK_POINTS: usize = 200;

fn r0() -> f64 {
    3.0
}
fn r1() -> f64 {
    8.0
}
fn alpha0() -> f64 {
    DEFAULT_ALPHA0
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    StandardNormal { dim: usize },
    DiagGaussian { mean: Vec<f64>, std: Vec<f64> },
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
}

impl PriorSpec {
    pub fn build(&self) -> Result<Box<dyn Density>> {
        Ok(match self {
            Self::StandardNormal { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidParameter("prior dimension must be positive".into()));
                }
                Box::new(StandardNormal::new(*dim))
            }
            Self::DiagGaussian { mean, std } => Box::new(DiagGaussian::new(mean.clone(), std.clone())?),
            Self::UniformBox { lo, hi } => Box::new(UniformBox::new(lo.clone(), hi.clone())?),
        })
    }
}

/// One change-of-variables family with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `log p(f(x)) + log|det J_f(x)|` for a layered flow; the prior
    /// defaults to a standard normal.
    Bijective {
        flow: FlowMap,
        #[serde(default)]
        prior: Option<PriorSpec>,
    },
    /// Identity flow with a standard-normal prior.
    Identity { dim: usize },
    /// Closed-form normalizing flow of the annulus.
    DonutNf {
        #[serde(default = "r0")]
        r0: f64,
        #[serde(default = "r1")]
        r1: f64,
    },
    /// Knothe-Rosenblatt map `z ↦ x`.
    Triangular {
        map: TriangularMap,
        #[serde(default)]
        prior: Option<PriorSpec>,
    },
    DonutSplit {
        #[serde(default = "r0")]
        r0: f64,
        #[serde(default = "r1")]
        r1: f64,
    },
    GaussianSplit,
    /// Circle of radius `R_M` with a uniform angle; density on the circle.
    DonutAutoencoder {
        #[serde(default = "r0")]
        r0: f64,
        #[serde(default = "r1")]
        r1: f64,
    },
    /// `g(z) = (z, 0)` with a standard-normal code.
    GaussianInjective,
    /// Correlated stochastic pair of the anisotropic Gaussian. A scale
    /// other than 1 multiplies the encoder variance and breaks consistency.
    GaussianStochastic {
        rho: f64,
        #[serde(default = "one")]
        encoder_variance_scale: f64,
    },
    DonutVae {
        #[serde(default = "r0")]
        r0: f64,
        #[serde(default = "r1")]
        r1: f64,
        #[serde(default = "alpha0")]
        alpha0: f64,
    },
    Vae { model: VaeModel },
    Gmm { weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<Vec<f64>> },
    Kmeans { codebook: FiniteCodebook },
}

/// A model file: the spec and an optional box for the normalization check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub spec: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_box: Option<CheckBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Normalization estimate as reported by checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mass: f64,
    pub std_error: f64,
    pub n: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    /// `max |log p_model(x) − log p*(x)|` over target draws.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::numeric::report::opt_log_f64")]
    pub max_target_discrepancy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook_mass: Option<f64>,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn donut(r0: f64, r1: f64) -> Result<DonutTarget> {
    DonutTarget::new(r0, r1)
}

fn donut_flow(r0: f64, r1: f64) -> Result<FlowMap> {
    donut(r0, r1)?;
    FlowMap::new(2, vec![Layer::DonutNf { r0, r1 }])
}

fn widened_encoder(m: &GaussianStochastic, scale: f64) -> Result<GaussianKernel> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("encoder variance scale {scale}")));
    }
    let s = (scale * (1.0 - m.rho * m.rho)).sqrt();
    GaussianKernel::linear(vec![vec![m.rho, 0.0]], vec![0.0], vec![s])
}

fn gmm(weights: &[f64], means: &[Vec<f64>], stds: &[Vec<f64>]) -> Result<Gmm> {
    check_dim(weights.len(), means.len())?;
    check_dim(weights.len(), stds.len())?;
    let comps = means
        .iter()
        .zip(stds)
        .map(|(m, s)| DiagGaussian::new(m.clone(), s.clone()))
        .collect::<Result<Vec<_>>>()?;
    Gmm::new(weights.to_vec(), comps)
}

fn prior_or_standard(prior: &Option<PriorSpec>, dim: usize) -> Result<Box<dyn Density>> {
    let p = match prior {
        Some(p) => p.build()?,
        None => Box::new(StandardNormal::new(dim)),
    };
    check_dim(dim, p.dim())?;
    Ok(p)
}

impl ModelSpec {
    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Self::Bijective { .. } => "bijective",
            Self::Identity { .. } => "identity",
            Self::DonutNf { .. } => "donut_nf",
            Self::Triangular { .. } => "triangular",
            Self::DonutSplit { .. } => "donut_split",
            Self::GaussianSplit => "gaussian_split",
            Self::DonutAutoencoder { .. } => "donut_autoencoder",
            Self::GaussianInjective => "gaussian_injective",
            Self::GaussianStochastic { .. } => "gaussian_stochastic",
            Self::DonutVae { .. } => "donut_vae",
            Self::Vae { .. } => "vae",
            Self::Gmm { .. } => "gmm",
            Self::Kmeans { .. } => "kmeans",
        }
    }

    /// Parameter validation beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Bijective { flow, prior } => {
                flow.clone().validated()?;
                prior_or_standard(prior, flow.dim).map(drop)
            }
            Self::Identity { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidParameter("identity dimension must be positive".into()));
                }
                Ok(())
            }
            Self::DonutNf { r0, r1 } => donut_flow(*r0, *r1).map(drop),
            Self::Triangular { map, prior } => {
                TriangularMap::new(map.coords.clone())?;
                prior_or_standard(prior, map.dim()).map(drop)
            }
            Self::DonutSplit { r0, r1 } | Self::DonutAutoencoder { r0, r1 } => donut(*r0, *r1).map(drop),
            Self::GaussianSplit | Self::GaussianInjective => Ok(()),
            Self::GaussianStochastic { rho, encoder_variance_scale } => {
                widened_encoder(&GaussianStochastic::new(*rho)?, *encoder_variance_scale).map(drop)
            }
            Self::DonutVae { r0, r1, alpha0 } => DonutModels::new(donut(*r0, *r1)?, *alpha0).map(drop),
            Self::Vae { model } => VaeModel::new(
                model.encoder.mean.clone(),
                model.encoder.std.clone(),
                model.decoder.mean.clone(),
                model.decoder.std.clone(),
            )
            .map(drop),
            Self::Gmm { weights, means, stds } => gmm(weights, means, stds).map(drop),
            Self::Kmeans { codebook } => codebook.clone().validated().map(drop),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Bijective { flow, .. } => flow.dim,
            Self::Identity { dim } => *dim,
            Self::Triangular { map, .. } => map.dim(),
            Self::Vae { model } => model.data_dim(),
            Self::Gmm { means, .. } => means.first().map_or(0, Vec::len),
            Self::Kmeans { codebook } => codebook.dim(),
            _ => 2,
        }
    }

    /// Ground-truth target when the family models one of the analytic
    /// examples.
    pub fn target(&self) -> Option<Box<dyn Density>> {
        match self {
            Self::DonutNf { r0, r1 }
            | Self::DonutSplit { r0, r1 }
            | Self::DonutAutoencoder { r0, r1 }
            | Self::DonutVae { r0, r1, .. } => donut(*r0, *r1).ok().map(|t| Box::new(t) as Box<dyn Density>),
            Self::GaussianSplit | Self::GaussianInjective | Self::GaussianStochastic { .. } => Some(Box::new(AnisotropicGaussian)),
            _ => None,
        }
    }

    /// Whether evaluation draws a code from an encoder distribution.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Self::GaussianStochastic { .. } | Self::DonutVae { .. } | Self::Vae { .. })
    }

    /// Whether the model is a density on the full data space.
    pub fn full_dimensional(&self) -> bool {
        !matches!(self, Self::DonutAutoencoder { .. } | Self::GaussianInjective | Self::Kmeans { .. })
    }

    /// Default integration box of the normalization check.
    pub fn default_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Self::DonutNf { r1, .. } | Self::DonutSplit { r1, .. } | Self::DonutVae { r1, .. } => {
                let h = r1 + 1.0;
                Some((vec![-h; 2], vec![h; 2]))
            }
            Self::GaussianSplit | Self::GaussianStochastic { .. } => Some((vec![-6.0, -3.0], vec![6.0, 3.0])),
            Self::Identity { dim } if *dim <= 2 => Some((vec![-8.0; *dim], vec![8.0; *dim])),
            Self::Gmm { means, stds, .. } if self.dim() <= 2 => {
                let d = self.dim();
                let lo = (0..d).map(|j| means.iter().zip(stds).map(|(m, s)| m[j] - 8.0 * s[j]).fold(f64::INFINITY, f64::min));
                let hi = (0..d).map(|j| means.iter().zip(stds).map(|(m, s)| m[j] + 8.0 * s[j]).fold(f64::NEG_INFINITY, f64::max));
                Some((lo.collect(), hi.collect()))
            }
            _ => None,
        }
    }

    /// Log-density at `x` with its factor breakdown. Stochastic families
    /// draw the code from the encoder.
    pub fn evaluate(&self, x: &[f64], rng: &mut StreamRng) -> Result<CovReport> {
        check_dim(self.dim(), x.len())?;
        match self {
            Self::Bijective { flow, prior } => cov_bijective(flow, prior_or_standard(prior, flow.dim)?.as_ref(), x),
            Self::Identity { dim } => cov_bijective(&FlowMap::identity(*dim), &StandardNormal::new(*dim), x),
            Self::DonutNf { r0, r1 } => cov_bijective(&donut_flow(*r0, *r1)?, &StandardNormal::new(2), x),
            Self::Triangular { map, prior } => {
                let prior = prior_or_standard(prior, map.dim())?;
                let z = map.inverse(x)?;
                let j = jacobian(map, &z, DiffConfig::DUAL)?;
                Ok(CovReport::from_terms([("log p(Z=f(x))", prior.log_density(&z)), ("-log|det J_g(f(x))|", -logdet_lu(&j)?)]))
            }
            Self::DonutSplit { r0, r1 } => cov_split(&DonutSplit { target: donut(*r0, *r1)? }, x),
            Self::GaussianSplit => cov_split(&GaussianSplit, x),
            Self::DonutAutoencoder { r0, r1 } => {
                let dec = CircleDecoder { radius: donut(*r0, *r1)?.r_manifold() };
                let prior = DonutModels::default().angle_prior();
                on_manifold(cov_autoencoder_at(&InjectivePair { decoder: &dec, encoder: &ArgEncoder }, &prior, x))
            }
            Self::GaussianInjective => {
                let (f, g) = crate::analytic::gaussian_injective_pair();
                on_manifold(cov_autoencoder_at(&InjectivePair { decoder: &g, encoder: &f }, &StandardNormal::new(1), x))
            }
            Self::GaussianStochastic { rho, encoder_variance_scale } => {
                let m = GaussianStochastic::new(*rho)?;
                let enc = widened_encoder(&m, *encoder_variance_scale)?;
                let z = enc.sample(x, rng);
                cov_bayes(&m.prior(), &m.decoder(), &enc, x, &z)
            }
            Self::DonutVae { r0, r1, alpha0 } => {
                let m = DonutModels::new(donut(*r0, *r1)?, *alpha0)?;
                if x[0] == 0.0 && x[1] == 0.0 {
                    return Ok(CovReport::outside("encoder undefined at the origin"));
                }
                let enc = m.vae_encoder();
                let z = enc.sample(x, rng);
                cov_bayes(&m.angle_prior(), &m.vae_decoder(), &enc, x, &z)
            }
            Self::Vae { model } => {
                let z = model.encoder.sample(x, rng);
                crate::stochastic::cov_vae(model, x, &z)
            }
            Self::Gmm { weights, means, stds } => crate::stochastic::cov_gmm(weights, means, stds, x),
            Self::Kmeans { codebook } => {
                let k = cov_kmeans(codebook, x)?;
                Ok(if k.on_manifold {
                    CovReport::from_terms([("log p(Z=f(x))", k.log_mass)])
                } else {
                    CovReport::outside("x is not a representative")
                })
            }
        }
    }

    /// One draw from the model distribution.
    pub fn sample(&self, rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(match self {
            Self::Bijective { flow, prior } => flow.forward(&prior_or_standard(prior, flow.dim)?.sample(rng)),
            Self::Identity { dim } => StandardNormal::new(*dim).sample(rng),
            Self::DonutNf { r0, r1 } => donut_flow(*r0, *r1)?.forward(&StandardNormal::new(2).sample(rng)),
            Self::Triangular { map, prior } => map.apply(&prior_or_standard(prior, map.dim())?.sample(rng)),
            Self::DonutSplit { r0, r1 } => DonutSplit { target: donut(*r0, *r1)? }.sample(rng),
            Self::GaussianSplit => GaussianSplit.sample(rng),
            Self::DonutAutoencoder { r0, r1 } => {
                let dec = CircleDecoder { radius: donut(*r0, *r1)?.r_manifold() };
                dec.apply(&[std::f64::consts::TAU * rng.random::<f64>()])
            }
            Self::GaussianInjective => vec![std_normal(rng), 0.0],
            Self::GaussianStochastic { rho, .. } => {
                let m = GaussianStochastic::new(*rho)?;
                let z = m.prior().sample(rng);
                m.decoder().sample(&z, rng)
            }
            Self::DonutVae { r0, r1, alpha0 } => {
                let m = DonutModels::new(donut(*r0, *r1)?, *alpha0)?;
                let z = m.angle_prior().sample(rng);
                m.vae_decoder().sample(&z, rng)
            }
            Self::Vae { model } => {
                let z = model.prior().sample(rng);
                model.decoder.sample(&z, rng)
            }
            Self::Gmm { weights, means, stds } => gmm(weights, means, stds)?.sample(rng),
            Self::Kmeans { codebook } => {
                let k = Discrete::new(codebook.priors.clone())?.sample_index(rng);
                codebook.decode(k).to_vec()
            }
        })
    }

    fn round_trips(&self, rng: &mut StreamRng) -> Result<Option<ConsistencyReport>> {
        let codes_from = |prior: &dyn Density, rng: &mut StreamRng| -> Vec<Vec<f64>> {
            (0..CHECK_POINTS).map(|_| prior.sample(rng)).collect()
        };
        let flow_check = |flow: &FlowMap, prior: &dyn Density, rng: &mut StreamRng| {
            let codes = codes_from(prior, rng);
            let points: Vec<Vec<f64>> = codes.iter().map(|z| flow.forward(z)).collect();
            check_deterministic_consistency(&flow.encoder(), flow, &codes, &points)
        };
        Ok(Some(match self {
            Self::Bijective { flow, prior } => flow_check(flow, prior_or_standard(prior, flow.dim)?.as_ref(), rng)?,
            Self::Identity { dim } => flow_check(&FlowMap::identity(*dim), &StandardNormal::new(*dim), rng)?,
            Self::DonutNf { r0, r1 } => flow_check(&donut_flow(*r0, *r1)?, &StandardNormal::new(2), rng)?,
            Self::DonutAutoencoder { r0, r1 } => {
                let t = donut(*r0, *r1)?;
                let dec = CircleDecoder { radius: t.r_manifold() };
                let codes: Vec<Vec<f64>> = (0..CHECK_POINTS).map(|_| vec![std::f64::consts::TAU * rng.random::<f64>()]).collect();
                let points: Vec<Vec<f64>> = (0..CHECK_POINTS).map(|_| t.sample(rng)).collect();
                check_deterministic_consistency(&ArgEncoder, &dec, &codes, &points)?
            }
            Self::GaussianInjective => {
                let (f, g) = crate::analytic::gaussian_injective_pair();
                let codes = codes_from(&StandardNormal::new(1), rng);
                let points: Vec<Vec<f64>> = (0..CHECK_POINTS).map(|_| AnisotropicGaussian.sample(rng)).collect();
                check_deterministic_consistency(&f, &g as &AffineMap, &codes, &points)?
            }
            _ => return Ok(None),
        }))
    }

    /// Round trips or joint-density consistency, normalization over the box
    /// and agreement with the analytic target where one exists.
    pub fn check(&self, check_box: Option<&CheckBox>, n: usize, rng: &mut StreamRng) -> Result<CheckReport> {
        self.validate()?;
        let mut failures = Vec::new();
        let mut consistency = self.round_trips(rng)?;
        let pairs = (n / 100).clamp(100, 5000);
        match self {
            Self::GaussianStochastic { rho, encoder_variance_scale } => {
                let m = GaussianStochastic::new(*rho)?;
                let enc = widened_encoder(&m, *encoder_variance_scale)?;
                consistency = Some(check_stochastic_consistency(&m.prior(), &enc, &m.decoder(), &AnisotropicGaussian, pairs, rng)?);
            }
            Self::DonutVae { r0, r1, alpha0 } => {
                let m = DonutModels::new(donut(*r0, *r1)?, *alpha0)?;
                consistency =
                    Some(check_stochastic_consistency(&m.angle_prior(), &m.vae_encoder(), &m.vae_decoder(), &m.target, pairs, rng)?);
            }
            _ => {}
        }
        if let Some(c) = &consistency {
            failures.extend(c.failures(CHECK_TOL).into_iter().map(String::from));
        }

        let bx = check_box.map(|b| (b.lo.clone(), b.hi.clone())).or_else(|| self.default_box());
        let mut normalization = None;
        if let (true, Some((lo, hi))) = (self.full_dimensional(), bx) {
            check_dim(self.dim(), lo.len())?;
            let base: u64 = rng.random();
            let f = |x: &[f64]| -> f64 {
                let key = x.iter().fold(base, |h, v| (h ^ v.to_bits()).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                self.evaluate(x, &mut seeded(key)).map_or(f64::NAN, |c| c.log_density)
            };
            let est = check_normalization(&f, &lo, &hi, n, rng)?;
            if !est.within(1.0, NORMALIZATION_SIGMAS) {
                failures.push("normalization".into());
            }
            normalization = Some(Normalization { mass: est.estimate, std_error: est.std_error, n: est.n, lo, hi });
        }

        let mut max_target_discrepancy = None;
        if let (true, Some(t)) = (self.full_dimensional(), self.target()) {
            let mut worst: f64 = 0.0;
            for _ in 0..CHECK_POINTS {
                let x = t.sample(rng);
                let v = self.evaluate(&x, rng)?.log_density;
                let d = (v - t.log_density(&x)).abs();
                worst = if d.is_nan() { f64::INFINITY } else { worst.max(d) };
            }
            if !(worst <= CHECK_TOL) {
                failures.push("target_density".into());
            }
            max_target_discrepancy = Some(worst);
        }

        let mut mass = None;
        if let Self::Kmeans { codebook } = self {
            let m = codebook_mass(codebook);
            if !((m - 1.0).abs() <= CHECK_TOL) {
                failures.push("codebook_mass".into());
            }
            mass = Some(m);
        }

        Ok(CheckReport {
            model: self.type_name().into(),
            consistency,
            normalization,
            max_target_discrepancy,
            codebook_mass: mass,
            failures,
        })
    }
}

fn on_manifold(r: Result<CovReport>) -> Result<CovReport> {
    match r {
        Err(Error::OffManifold { .. }) => Ok(CovReport::outside("x off the decoder manifold")),
        other => other,
    }
}
