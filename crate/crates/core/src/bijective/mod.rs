//! Bijective flows built from a finite composition of invertible layers and
//! their change-of-variables evaluators.
//!
//! Labels used in every report: `log p(Z=f(x))` for the code density and
//! `log|det J_f(x)|` for the encoder volume change.

pub mod layers;
pub mod triangular;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::density::{log_sum_exp, Density, Discrete, Gmm};
use crate::numeric::linalg::logdet_lu;
use crate::numeric::map::{jacobian, DiffConfig, Map};
use crate::numeric::report::CovReport;

pub use layers::{random_coupling_stack, Conditioner, Dense, Encoder, FlowMap, Layer, ScalarBijection};
pub use triangular::{knothe_rosenblatt_apply, TriangularCoord, TriangularMap};

pub use crate::numeric::density::Gmm as GmmCodeDistribution;

pub const TERM_PRIOR: &str = "log p(Z=f(x))";
pub const TERM_LOGDET: &str = "log|det J_f(x)|";
pub const TERM_MIXTURE: &str = "log Σ_k p(k) N(f(x)|μ_k,Σ_k)";
pub const TERM_CLUSTER: &str = "log p(k=h(x))";

/// Tolerance of the runtime unit-determinant assertion.
pub const UNIT_DET_TOL: f64 = 1e-9;

fn finite_logdet(ld: f64) -> Result<f64> {
    if ld.is_finite() {
        Ok(ld)
    } else {
        Err(Error::RankDeficient { pivot: 0.0, threshold: 0.0 })
    }
}

/// `log p(x) = log p(Z=f(x)) + log|det J_f(x)|`, with the determinant
/// assembled from the closed-form layer terms.
pub fn cov_bijective(flow: &FlowMap, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    check_dim(flow.dim, prior.dim())?;
    match flow.inverse_with_logdet(x)? {
        None => Ok(CovReport::outside("x outside the flow image")),
        Some((z, ld)) => {
            let ld = finite_logdet(ld)?;
            Ok(CovReport::from_terms([(TERM_PRIOR, prior.log_density(&z)), (TERM_LOGDET, ld)]))
        }
    }
}

/// Same quantity with `log|det J_f(x)|` from the encoder Jacobian (dual
/// numbers) and pivoted LU instead of the layer sum.
pub fn cov_bijective_lu(flow: &FlowMap, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    check_dim(flow.dim, prior.dim())?;
    if !flow.in_range(x) {
        return Ok(CovReport::outside("x outside the flow image"));
    }
    cov_bijective_map(&flow.encoder(), prior, x)
}

/// Decoder form: `log p(Z=z) − log|det J_g(z)|` at `z = f(x)`, with `J_g`
/// differentiated at the code.
pub fn cov_bijective_decoder_form(flow: &FlowMap, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    check_dim(flow.dim, prior.dim())?;
    let Some(z) = flow.inverse(x) else {
        return Ok(CovReport::outside("x outside the flow image"));
    };
    let jg = jacobian(flow, &z, DiffConfig::DUAL)?;
    let ld = logdet_lu(&jg)?;
    Ok(CovReport::from_terms([(TERM_PRIOR, prior.log_density(&z)), (TERM_LOGDET, -ld)]))
}

/// Bijective CoV for an arbitrary differentiable encoder `f`.
pub fn cov_bijective_map(encoder: &dyn Map, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    check_dim(encoder.dim_in(), x.len())?;
    check_dim(encoder.dim_in(), encoder.dim_out())?;
    check_dim(encoder.dim_out(), prior.dim())?;
    let z = encoder.apply(x);
    let jf = jacobian(encoder, x, DiffConfig::DUAL)?;
    let ld = logdet_lu(&jf)?;
    Ok(CovReport::from_terms([(TERM_PRIOR, prior.log_density(&z)), (TERM_LOGDET, ld)]))
}

/// A flow whose layers all have unit determinant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlowMap", into = "FlowMap")]
pub struct IncompressibleFlow(FlowMap);

impl IncompressibleFlow {
    pub fn new(flow: FlowMap) -> Result<Self> {
        let flow = flow.validated()?;
        if let Some(l) = flow.layers.iter().find(|l| !l.unit_determinant()) {
            return Err(Error::InvalidParameter(format!("layer does not certify unit determinant: {l:?}")));
        }
        Ok(Self(flow))
    }

    pub fn flow(&self) -> &FlowMap {
        &self.0
    }
}

impl TryFrom<FlowMap> for IncompressibleFlow {
    type Error = Error;
    fn try_from(f: FlowMap) -> Result<Self> {
        Self::new(f)
    }
}

impl From<IncompressibleFlow> for FlowMap {
    fn from(f: IncompressibleFlow) -> Self {
        f.0
    }
}

/// `log p(x) = log p(Z=f(x))`; the layer log-determinants are still summed
/// and must vanish.
pub fn cov_incompressible(flow: &IncompressibleFlow, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    check_dim(flow.0.dim, prior.dim())?;
    let (z, ld) = flow.0.inverse_with_logdet(x)?.ok_or_else(|| Error::OutsideSupport("x outside the flow image".into()))?;
    if !(ld.abs() < UNIT_DET_TOL) {
        return Err(Error::InvalidParameter(format!("incompressible flow has log-determinant {ld:e}")));
    }
    Ok(CovReport::from_terms([(TERM_PRIOR, prior.log_density(&z))]))
}

/// `log p(x) = log|det J_f(x)| + log Σ_k p(k) N(f(x)|μ_k, Σ_k)`.
pub fn cov_gmm_flow(flow: &FlowMap, gmm: &Gmm, x: &[f64]) -> Result<CovReport> {
    check_dim(flow.dim, gmm.dim())?;
    match flow.inverse_with_logdet(x)? {
        None => Ok(CovReport::outside("x outside the flow image")),
        Some((z, ld)) => {
            let ld = finite_logdet(ld)?;
            let mix = log_sum_exp(&gmm.log_joint(&z));
            Ok(CovReport::from_terms([(TERM_LOGDET, ld), (TERM_MIXTURE, mix)]))
        }
    }
}

/// Total cluster assignment `h(x)`.
pub trait ClusterAssigner: Send + Sync {
    fn n_clusters(&self) -> usize;
    fn assign(&self, x: &[f64]) -> Option<usize>;
}

/// Nearest representative in an optional linear embedding `E x`; ties go to
/// the lowest index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestAssigner {
    pub representatives: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<Vec<f64>>>,
}

impl NearestAssigner {
    pub fn new(representatives: Vec<Vec<f64>>) -> Result<Self> {
        if representatives.is_empty() {
            return Err(Error::InvalidParameter("assigner needs at least one representative".into()));
        }
        let d = representatives[0].len();
        for r in &representatives {
            check_dim(d, r.len())?;
        }
        Ok(Self { representatives, embedding: None })
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        match &self.embedding {
            None => x.to_vec(),
            Some(e) => e.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect(),
        }
    }
}

impl ClusterAssigner for NearestAssigner {
    fn n_clusters(&self) -> usize {
        self.representatives.len()
    }

    fn assign(&self, x: &[f64]) -> Option<usize> {
        let e = self.embed(x);
        let mut best: Option<(usize, f64)> = None;
        for (k, r) in self.representatives.iter().enumerate() {
            if r.len() != e.len() {
                return None;
            }
            let d: f64 = r.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum();
            if !d.is_finite() {
                return None;
            }
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best.map(|(k, _)| k)
    }
}

/// Vector-quantized flow: a cluster assigner, cluster priors and one flow
/// per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqFlowModel {
    pub assigner: NearestAssigner,
    pub priors: Discrete,
    pub flows: Vec<FlowMap>,
}

impl VqFlowModel {
    pub fn new(assigner: NearestAssigner, priors: Discrete, flows: Vec<FlowMap>) -> Result<Self> {
        let k = assigner.n_clusters();
        check_dim(k, priors.probs.len())?;
        check_dim(k, flows.len())?;
        let d = flows[0].dim;
        for f in &flows {
            check_dim(d, f.dim)?;
        }
        Ok(Self { assigner, priors, flows })
    }
}

/// `log p(x) = log p(h(x)) + log p(Z=f_{h(x)}(x)) + log|det J_{f_{h(x)}}(x)|`.
pub fn cov_vq_flow(model: &VqFlowModel, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    let k = model
        .assigner
        .assign(x)
        .ok_or_else(|| Error::OutsideSupport("no cluster assigned to x".into()))?;
    let flow = &model.flows[k];
    check_dim(flow.dim, prior.dim())?;
    match flow.inverse_with_logdet(x)? {
        None => Ok(CovReport::outside("x outside the image of its cluster flow")),
        Some((z, ld)) => {
            let ld = finite_logdet(ld)?;
            Ok(CovReport::from_terms([
                (TERM_CLUSTER, model.priors.log_prob(k)),
                (TERM_PRIOR, prior.log_density(&z)),
                (TERM_LOGDET, ld),
            ]))
        }
    }
}

/// Two clusters split by the line through the origin at angle `axis`: each
/// cluster flow halves the polar angle of `base` around the cluster
/// direction `axis ± π/2`, so every cluster flow maps the plane onto its own
/// half-plane. `weights` are the cluster priors.
pub fn half_plane_vq(base: FlowMap, axis: f64, weights: [f64; 2]) -> Result<VqFlowModel> {
    use std::f64::consts::FRAC_PI_2;
    check_dim(2, base.dim)?;
    let dirs = [axis + FRAC_PI_2, axis - FRAC_PI_2];
    let reps = dirs.iter().map(|a| vec![a.cos(), a.sin()]).collect();
    let flows = dirs
        .iter()
        .map(|&offset| {
            let mut layers = base.layers.clone();
            layers.push(Layer::AngularRescale { factor: 2.0, offset });
            FlowMap::new(2, layers)
        })
        .collect::<Result<Vec<_>>>()?;
    VqFlowModel::new(NearestAssigner::new(reps)?, Discrete::new(weights.to_vec())?, flows)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use nalgebra::DMatrix;

    use super::*;
    use crate::analytic::{donut_density, DonutTarget};
    use crate::numeric::density::{DiagGaussian, StandardNormal};
    use crate::numeric::integrate::{mc_integrate, quad_integrate_2d};
    use crate::numeric::map::AffineMap;
    use crate::numeric::rng::seeded;

    fn donut_flow() -> FlowMap {
        FlowMap::new(2, vec![Layer::DonutNf { r0: 3.0, r1: 8.0 }]).unwrap()
    }

    #[test]
    fn gaussian_example_at_origin() {
        let f = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        let r = cov_bijective_map(&f, &StandardNormal::new(2), &[0.0, 0.0]).unwrap();
        assert!((r.log_density + PI.ln()).abs() < 1e-12);
        // Same as a decoder flow g(z) = [z1, z2/2].
        let flow = FlowMap::new(2, vec![Layer::ActNorm { log_scale: vec![0.0, -(2f64.ln())], shift: vec![0.0, 0.0] }]).unwrap();
        let r2 = cov_bijective(&flow, &StandardNormal::new(2), &[0.0, 0.0]).unwrap();
        assert!((r2.log_density + PI.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_flow_is_prior() {
        let prior = DiagGaussian::new(vec![1.0, -1.0], vec![0.5, 2.0]).unwrap();
        let x = [0.2, 0.7];
        let r = cov_bijective(&FlowMap::identity(2), &prior, &x).unwrap();
        assert_eq!(r.log_density, prior.log_density(&x));
    }

    #[test]
    fn donut_flow_reproduces_true_density() {
        let flow = donut_flow();
        let mut rng = seeded(5);
        let prior = StandardNormal::new(2);
        for _ in 0..200 {
            let z = prior.sample(&mut rng);
            let x = flow.forward(&z);
            let r = cov_bijective(&flow, &prior, &x).unwrap();
            let truth = -(55.0 * PI).ln();
            assert!((r.log_density - truth).abs() < 1e-9, "{} at z={z:?}", r.log_density);
            let d = cov_bijective_decoder_form(&flow, &prior, &x).unwrap();
            assert!((d.log_density - r.log_density).abs() < 1e-9);
            let e = cov_bijective_lu(&flow, &prior, &x).unwrap();
            assert!((e.log_density - r.log_density).abs() < 1e-9);
        }
        assert_eq!(cov_bijective(&flow, &prior, &[1.0, 0.0]).unwrap().log_density, f64::NEG_INFINITY);
    }

    #[test]
    fn singular_encoder_is_degenerate() {
        let f = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert!(matches!(
            cov_bijective_map(&f, &StandardNormal::new(2), &[0.3, 0.1]),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn incompressible_rotation_and_couplings() {
        let prior = StandardNormal::new(2);
        let rot = IncompressibleFlow::new(FlowMap::new(2, vec![Layer::rotation(PI / 6.0)]).unwrap()).unwrap();
        let r = cov_incompressible(&rot, &prior, &[1.0, 0.0]).unwrap();
        assert!((r.log_density - prior.log_density(&[1.0, 0.0])).abs() < 1e-14);

        // Paired scales s and 1/s: log-scales (a, −a) before centring.
        let cond = Conditioner {
            layers: vec![Dense { w: vec![vec![0.7], vec![-0.7], vec![0.1], vec![0.2]], b: vec![0.0; 4] }],
        };
        let gin = Layer::AffineCoupling { split: 1, conditioner: cond, volume_preserving: true };
        let perm = Layer::Permutation { perm: vec![1, 2, 0] };
        let flow = IncompressibleFlow::new(FlowMap::new(3, vec![gin, perm]).unwrap()).unwrap();
        let r = cov_incompressible(&flow, &StandardNormal::new(3), &[0.3, -0.4, 1.2]).unwrap();
        assert!(r.is_consistent());
        let z = flow.flow().inverse(&[0.3, -0.4, 1.2]).unwrap();
        assert_eq!(r.log_density, StandardNormal::new(3).log_density(&z));

        let bad = FlowMap::new(2, vec![Layer::ActNorm { log_scale: vec![0.1, 0.0], shift: vec![0.0, 0.0] }]).unwrap();
        assert!(IncompressibleFlow::new(bad).is_err());
    }

    #[test]
    fn gmm_flow_examples() {
        let x = [0.3, -0.8];
        let flow = random_coupling_stack(2, 2, 11).unwrap();
        let gmm1 = Gmm::new(vec![1.0], vec![DiagGaussian::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()]).unwrap();
        let a = cov_gmm_flow(&flow, &gmm1, &x).unwrap();
        let b = cov_bijective(&flow, &StandardNormal::new(2), &x).unwrap();
        assert_eq!(a.log_density, b.log_density);

        let g2 = Gmm::new(
            vec![0.5, 0.5],
            vec![DiagGaussian::new(vec![1.0], vec![1.0]).unwrap(), DiagGaussian::new(vec![-1.0], vec![1.0]).unwrap()],
        )
        .unwrap();
        let r = cov_gmm_flow(&FlowMap::identity(1), &g2, &[0.0]).unwrap();
        assert!((r.log_density.exp() - 0.241_970_724_519_143_37).abs() < 1e-15);

        // f(x) = 2x, i.e. decoder g(z) = z/2.
        let half = FlowMap::new(1, vec![Layer::ActNorm { log_scale: vec![-(2f64.ln())], shift: vec![0.0] }]).unwrap();
        let g1 = Gmm::new(vec![1.0], vec![DiagGaussian::new(vec![0.5], vec![0.7]).unwrap()]).unwrap();
        let r = cov_gmm_flow(&half, &g1, &[0.9]).unwrap();
        let expect = 2.0 * (-0.5 * ((1.8f64 - 0.5) / 0.7).powi(2)).exp() / (0.7 * (2.0 * PI).sqrt());
        assert!((r.log_density.exp() - expect).abs() < 1e-14);
    }

    #[test]
    fn vq_single_cluster_equals_bijective() {
        let flow = random_coupling_stack(2, 2, 4).unwrap();
        let m = VqFlowModel::new(NearestAssigner::new(vec![vec![0.0, 0.0]]).unwrap(), Discrete::new(vec![1.0]).unwrap(), vec![flow.clone()]).unwrap();
        let x = [0.4, 0.1];
        let prior = StandardNormal::new(2);
        assert_eq!(cov_vq_flow(&m, &prior, &x).unwrap().log_density, cov_bijective(&flow, &prior, &x).unwrap().log_density);
    }

    #[test]
    fn half_plane_identity_clusters_carry_half_the_mass() {
        // With identity flows each cluster keeps only the prior mass of its
        // half-plane, so the literal construction integrates to 1/2.
        let m = VqFlowModel::new(
            NearestAssigner::new(vec![vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap(),
            Discrete::new(vec![0.5, 0.5]).unwrap(),
            vec![FlowMap::identity(2), FlowMap::identity(2)],
        )
        .unwrap();
        let prior = StandardNormal::new(2);
        let f = |x: f64, y: f64| cov_vq_flow(&m, &prior, &[x, y]).unwrap().log_density.exp();
        let v = quad_integrate_2d(f, (-9.0, 9.0), (-9.0, 0.0), 1e-9).unwrap()
            + quad_integrate_2d(f, (-9.0, 9.0), (0.0, 9.0), 1e-9).unwrap();
        assert!((v - 0.5).abs() < 1e-8, "{v}");
    }

    #[test]
    fn half_plane_clusters_normalize() {
        let m = half_plane_vq(FlowMap::identity(2), 0.0, [0.3, 0.7]).unwrap();
        let prior = StandardNormal::new(2);
        let f = |x: f64, y: f64| cov_vq_flow(&m, &prior, &[x, y]).unwrap().log_density.exp();
        let upper = quad_integrate_2d(f, (-12.0, 12.0), (0.0, 12.0), 1e-9).unwrap();
        let lower = quad_integrate_2d(f, (-12.0, 12.0), (-12.0, 0.0), 1e-9).unwrap();
        assert!((upper - 0.3).abs() < 1e-7, "{upper}");
        assert!((lower - 0.7).abs() < 1e-7, "{lower}");
        let est = mc_integrate(|x| f(x[0], x[1]), &[-8.0, -8.0], &[8.0, 8.0], 200_000, &mut seeded(2)).unwrap();
        assert!(est.within(1.0, 3.0), "{est:?}");
    }

    #[test]
    fn donut_vq_clusters_reproduce_density() {
        let m = half_plane_vq(donut_flow(), 0.0, [0.5, 0.5]).unwrap();
        let prior = StandardNormal::new(2);
        let t = DonutTarget::default();
        let mut rng = seeded(8);
        for _ in 0..100 {
            let x = t.sample(&mut rng);
            if x[1] == 0.0 {
                continue;
            }
            let r = cov_vq_flow(&m, &prior, &x).unwrap();
            assert!((r.log_density - donut_density(&x).unwrap().value).abs() < 1e-9);
        }
    }
}
