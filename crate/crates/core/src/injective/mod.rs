//! Bottleneck models with deterministic encoders: densities on the decoder
//! manifold, finite codebooks and charted manifolds.

pub mod codebook;
pub mod manifold;

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};

use crate::bijective::FlowMap;
use crate::error::{check_dim, Error, Result};
use crate::numeric::density::Density;
use crate::numeric::dual::Real;
use crate::numeric::linalg::{half_logdet_gram, inverse, logdet_lu};
use crate::numeric::map::{jacobian, AffineMap, DiffConfig, Map, Smooth};
use crate::numeric::report::CovReport;

pub use codebook::{cov_kmeans, estimate_facet_prior, FacetPrior, FiniteCodebook, KmeansDensity};
pub use manifold::{
    cov_conformal, cov_conformal_vq, cov_manifold_flow, cov_softflow, Chart, ChartUniformPrior, CircleChart, ConformalAtlas,
    LineSoftFlow, SoftFlow,
};

/// Relative tolerance of the on-manifold test `‖x − g(f(x))‖ ≤ tol·(1 + ‖x‖)`.
pub const ON_MANIFOLD_RTOL: f64 = 1e-8;

pub const TERM_CODE: &str = "log p(Z=z)";
pub const TERM_GRAM: &str = "-½ log|det(J_gᵀJ_g)|";

/// Decoder `g: R^C → R^D` with a left-inverse encoder `f`.
pub struct InjectivePair<'a> {
    pub decoder: &'a dyn Map,
    pub encoder: &'a dyn Map,
}

impl InjectivePair<'_> {
    /// `f(x)` when `x` is on the decoder manifold, else the distance error.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.encoder.dim_in(), x.len())?;
        let z = self.encoder.apply(x);
        let xr = self.decoder.apply(&z);
        let d = distance(x, &xr);
        if !(d <= ON_MANIFOLD_RTOL * (1.0 + norm(x))) {
            return Err(Error::OffManifold { distance: d });
        }
        Ok(z)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Density on the decoder manifold at `g(z)`:
/// `log p(Z=z) − ½ log|det(J_gᵀJ_g)|`.
pub fn cov_autoencoder(decoder: &dyn Map, prior: &dyn Density, z: &[f64]) -> Result<CovReport> {
    check_dim(decoder.dim_in(), z.len())?;
    check_dim(prior.dim(), z.len())?;
    if decoder.dim_in() > decoder.dim_out() {
        return Err(Error::InvalidParameter("decoder must not reduce dimension".into()));
    }
    let j = jacobian(decoder, z, DiffConfig::DUAL)?;
    let h = half_logdet_gram(&j)?;
    Ok(CovReport::from_terms([(TERM_CODE, prior.log_density(z)), (TERM_GRAM, -h)]))
}

/// [`cov_autoencoder`] at the code of an on-manifold data point.
pub fn cov_autoencoder_at(pair: &InjectivePair<'_>, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    let z = pair.project(x)?;
    cov_autoencoder(pair.decoder, prior, &z)
}

/// Encoder-side candidate `log p(Z=f(x)) + ½ log|det(J_f J_fᵀ)|`. Agrees
/// with the decoder-side density on the manifold but is not a density off
/// it; kept to demonstrate that.
pub fn hypothetical_encoder_cov(encoder: &dyn Map, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    let z = encoder.apply(x);
    let j = jacobian(encoder, x, DiffConfig::DUAL)?;
    let h = half_logdet_gram(&j.transpose())?;
    Ok(CovReport::from_terms([("log p(Z=f(x))", prior.log_density(&z)), ("½ log|det(J_f J_fᵀ)|", h)]))
}

/// `θ ↦ (R cos θ, R sin θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleDecoder {
    pub radius: f64,
}

impl Smooth for CircleDecoder {
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

/// Polar angle in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArgEncoder;

impl Smooth for ArgEncoder {
    fn dim_in(&self) -> usize {
        2
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
        let a = x[1].atan2(x[0]);
        vec![if a.value() < 0.0 { a + R::cst(TAU) } else { a }]
    }
}

/// Linear decoder `g(z) = W z` with `W` of full column rank, its
/// pseudo-inverse and the orthonormal bases of its column space and
/// complement.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBottleneck {
    pub w: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    /// `U_∥` (D×C), left singular vectors.
    pub u_par: DMatrix<f64>,
    /// `U_⊥` (D×(D−C)), orthonormal complement.
    pub u_perp: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// `V` (C×C), right singular vectors.
    pub v: DMatrix<f64>,
}

fn fix_sign(col: &mut [f64]) -> bool {
    let k = col
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if col[k] < 0.0 {
        col.iter_mut().for_each(|v| *v = -*v);
        true
    } else {
        false
    }
}

impl LinearBottleneck {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let (d, c) = w.shape();
        if c == 0 || c > d {
            return Err(Error::InvalidParameter(format!("bottleneck matrix must be tall, got {d}x{c}")));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bottleneck matrix".into()));
        }
        let svd = w.clone().svd(true, true);
        let (Some(mut u), Some(vt)) = (svd.u, svd.v_t) else {
            return Err(Error::NonConvergence("SVD".into()));
        };
        let s = svd.singular_values;
        let smax = s.max();
        let smin = s.min();
        if !(smin > crate::numeric::linalg::PIVOT_RTOL * smax) {
            return Err(Error::RankDeficient { pivot: smin, threshold: crate::numeric::linalg::PIVOT_RTOL * smax });
        }
        let mut v = vt.transpose();
        for k in 0..c {
            let mut col: Vec<f64> = u.column(k).iter().copied().collect();
            if fix_sign(&mut col) {
                u.set_column(k, &DVector::from_vec(col));
                let nv = -v.column(k);
                v.set_column(k, &nv);
            }
        }
        let u_perp = complement(&u)?;
        let gram = w.transpose() * &w;
        let pinv = inverse(&gram)? * w.transpose();
        Ok(Self { w, pinv, u_par: u, u_perp, singular_values: s, v })
    }

    /// Same bottleneck with a user-supplied complement basis.
    pub fn with_complement(w: DMatrix<f64>, u_perp: DMatrix<f64>) -> Result<Self> {
        let mut lb = Self::new(w)?;
        let (d, c) = lb.w.shape();
        if u_perp.shape() != (d, d - c) {
            return Err(Error::DimensionMismatch { expected: d - c, got: u_perp.ncols() });
        }
        let dev_o = (u_perp.transpose() * &u_perp - DMatrix::identity(d - c, d - c)).abs().max();
        let dev_p = (lb.u_par.transpose() * &u_perp).abs().max();
        if dev_o > 1e-10 || dev_p > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "complement basis not orthonormal to the column space (deviations {dev_o:e}, {dev_p:e})"
            )));
        }
        lb.u_perp = u_perp;
        Ok(lb)
    }

    pub fn code_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn data_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn decoder(&self) -> AffineMap {
        AffineMap::linear(self.w.clone())
    }

    pub fn encoder(&self) -> AffineMap {
        AffineMap::linear(self.pinv.clone())
    }

    /// `½ log det(WᵀW)`.
    pub fn half_logdet(&self) -> f64 {
        self.singular_values.iter().map(|s| s.ln()).sum()
    }
}

/// Orthonormal basis of the complement of the columns of `u` by
/// Gram-Schmidt over the standard basis (deterministic order), with the
/// largest entry of every column positive.
fn complement(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, c) = u.shape();
    let mut basis: Vec<DVector<f64>> = (0..c).map(|k| u.column(k).into_owned()).collect();
    let mut out: Vec<DVector<f64>> = Vec::new();
    let mut cands: Vec<(usize, f64)> = (0..d)
        .map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            for b in &basis {
                e -= b * b.dot(&e);
            }
            (i, e.norm())
        })
        .collect();
    // Most informative axes first, ties by index.
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, _) in cands {
        if out.len() == d - c {
            break;
        }
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                e -= b * b.dot(&e);
            }
        }
        let n = e.norm();
        if n > 1e-6 {
            let mut col: Vec<f64> = (e / n).iter().copied().collect();
            fix_sign(&mut col);
            let v = DVector::from_vec(col);
            basis.push(v.clone());
            out.push(v);
        }
    }
    if out.len() != d - c {
        return Err(Error::NonConvergence("complement basis".into()));
    }
    Ok(DMatrix::from_columns(&out))
}

/// `log p(F(x)) = log p(Z=W⁺x) − ½ log|det(WᵀW)|`.
pub fn cov_linear_autoencoder(lb: &LinearBottleneck, prior: &dyn Density, x: &[f64]) -> Result<CovReport> {
    check_dim(lb.data_dim(), x.len())?;
    check_dim(lb.code_dim(), prior.dim())?;
    let z = &lb.pinv * DVector::from_column_slice(x);
    let gram = lb.w.transpose() * &lb.w;
    let h = 0.5 * logdet_lu(&gram)?;
    Ok(CovReport::from_terms([("log p(Z=W⁺x)", prior.log_density(z.as_slice())), ("-½ log|det(WᵀW)|", -h)]))
}

/// Zero-padding `R^C → R^D`.
struct Pad<'a> {
    inner: &'a FlowMap,
    code_dim: usize,
}

impl Smooth for Pad<'_> {
    fn dim_in(&self) -> usize {
        self.code_dim
    }
    fn dim_out(&self) -> usize {
        self.inner.dim
    }
    fn eval<R: Real>(&self, z: &[R]) -> Vec<R> {
        let mut p = z.to_vec();
        p.resize(self.inner.dim, R::cst(0.0));
        self.inner.forward_generic(&p)
    }
}

/// M-flow density at `x = g_D(pad(g_C(z)))`:
/// `log p(Z=z) − log|det J_{g_C}(z)| − ½ log|det(J̃ᵀJ̃)|` with `J̃` the
/// Jacobian of `g_D ∘ pad` at `g_C(z)`.
pub fn cov_mflow(g_c: &FlowMap, g_d: &FlowMap, prior: &dyn Density, z: &[f64]) -> Result<CovReport> {
    check_dim(g_c.dim, z.len())?;
    check_dim(prior.dim(), z.len())?;
    if g_c.dim > g_d.dim {
        return Err(Error::InvalidParameter("code flow larger than data flow".into()));
    }
    let (zp, ld_c) = g_c.forward_with_logdet(z)?;
    let jt = jacobian(&Pad { inner: g_d, code_dim: g_c.dim }, &zp, DiffConfig::DUAL)?;
    let h = half_logdet_gram(&jt)?;
    Ok(CovReport::from_terms([
        (TERM_CODE, prior.log_density(z)),
        ("-log|det J_gC(z)|", -ld_c),
        ("-½ log|det(J̃ᵀJ̃)|", -h),
    ]))
}

/// Decoder of an M-flow as a map `R^C → R^D`.
pub fn mflow_decode(g_c: &FlowMap, g_d: &FlowMap, z: &[f64]) -> Vec<f64> {
    let mut p = g_c.forward(z);
    p.resize(g_d.dim, 0.0);
    g_d.forward(&p)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::analytic::{DonutModels, DonutTarget, GAUSS_STD};
    use crate::bijective::{cov_bijective, random_coupling_stack, Layer};
    use crate::numeric::density::{log_normal_1d, StandardNormal, UniformBox};

    const LN_33_388PI: f64 = -3.609_227_664_006_193_3;

    fn circle_prior() -> UniformBox {
        UniformBox::new(vec![0.0], vec![TAU]).unwrap()
    }

    #[test]
    fn donut_circle_autoencoder() {
        let r_m = DonutTarget::default().r_manifold();
        assert!((r_m - 194.0 / 33.0).abs() < 1e-14);
        let dec = CircleDecoder { radius: r_m };
        for &z in &[0.1, 2.0, 5.5] {
            let r = cov_autoencoder(&dec, &circle_prior(), &[z]).unwrap();
            assert!((r.log_density - LN_33_388PI).abs() < 1e-12);
        }
        let pair = InjectivePair { decoder: &dec, encoder: &ArgEncoder };
        let x = dec.eval(&[1.2]);
        let r = cov_autoencoder_at(&pair, &circle_prior(), &x).unwrap();
        assert!((r.log_density - LN_33_388PI).abs() < 1e-12);
        assert!(matches!(cov_autoencoder_at(&pair, &circle_prior(), &[7.0, 0.0]), Err(Error::OffManifold { .. })));
        // Self-consistency f(g(z)) = z.
        for &z in &[0.0, 1.0, 3.0, 6.2] {
            assert!((ArgEncoder.eval(&dec.eval(&[z]))[0] - z).abs() < 1e-9);
        }
        let _ = DonutModels::default();
    }

    #[test]
    fn isometric_and_duplicating_embeddings() {
        let prior = StandardNormal::new(1);
        let iso = AffineMap::linear(DMatrix::from_row_slice(3, 1, &[0.6, 0.0, 0.8]));
        let r = cov_autoencoder(&iso, &prior, &[0.4]).unwrap();
        assert!((r.log_density - prior.log_density(&[0.4])).abs() < 1e-14);
        let dup = AffineMap::linear(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let r = cov_autoencoder(&dup, &prior, &[0.4]).unwrap();
        assert!((r.log_density - (prior.log_density(&[0.4]) - 0.5 * 2f64.ln())).abs() < 1e-14);
        let flat = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert!(matches!(cov_autoencoder(&flat, &StandardNormal::new(2), &[0.0, 0.0]), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn square_decoder_matches_bijective() {
        let flow = random_coupling_stack(3, 3, 21).unwrap();
        let prior = StandardNormal::new(3);
        let z = [0.2, -0.5, 0.9];
        let x = flow.forward(&z);
        let a = cov_autoencoder(&flow, &prior, &z).unwrap().log_density;
        let b = cov_bijective(&flow, &prior, &x).unwrap().log_density;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn linear_bottleneck_examples() {
        let prior = StandardNormal::new(1);
        let e1 = LinearBottleneck::new(DMatrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        let r = cov_linear_autoencoder(&e1, &prior, &[0.7, 3.0]).unwrap();
        assert!((r.log_density - prior.log_density(&[0.7])).abs() < 1e-15);
        let two = LinearBottleneck::new(DMatrix::from_row_slice(2, 1, &[2.0, 0.0])).unwrap();
        let r = cov_linear_autoencoder(&two, &prior, &[0.7, 3.0]).unwrap();
        assert!((r.log_density - (prior.log_density(&[0.35]) - 2f64.ln())).abs() < 1e-15);
        assert!(LinearBottleneck::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])).is_err());
    }

    #[test]
    fn pca_axis_matches_injective_gaussian_model() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(GAUSS_STD.iter().map(|s| s * s).collect()));
        let eig = cov.symmetric_eigen();
        let k = eig.eigenvalues.imax();
        let w = DMatrix::from_column_slice(2, 1, eig.eigenvectors.column(k).as_slice());
        let lb = LinearBottleneck::new(w).unwrap();
        let prior = StandardNormal::new(1);
        for &x1 in &[-1.5, 0.0, 0.8] {
            let r = cov_linear_autoencoder(&lb, &prior, &[x1, 0.0]).unwrap();
            assert!((r.log_density - log_normal_1d(x1, 0.0, 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn bottleneck_factors_and_consistency() {
        let w = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, -0.3, 0.8, 0.5, 0.5, 0.0, -1.1]);
        let lb = LinearBottleneck::new(w.clone()).unwrap();
        assert!((&lb.pinv * &w - DMatrix::identity(2, 2)).abs().max() < 1e-10);
        assert!((lb.u_perp.transpose() * &lb.u_perp - DMatrix::identity(2, 2)).abs().max() < 1e-10);
        assert!((lb.u_par.transpose() * &lb.u_perp).abs().max() < 1e-10);
        let rebuilt = &lb.u_par * DMatrix::from_diagonal(&lb.singular_values) * lb.v.transpose();
        assert!((rebuilt - &w).abs().max() < 1e-12);
        let prior = StandardNormal::new(2);
        let z = [0.3, -0.4];
        let x = lb.decoder().eval(&z);
        let a = cov_linear_autoencoder(&lb, &prior, &x).unwrap().log_density;
        let b = cov_autoencoder(&lb.decoder(), &prior, &z).unwrap().log_density;
        assert!((a - b).abs() < 1e-10);
        let bad = LinearBottleneck::with_complement(w, DMatrix::identity(4, 2));
        assert!(bad.is_err());
    }

    #[test]
    fn mflow_examples() {
        let prior = StandardNormal::new(1);
        let z = [0.6];
        let id1 = FlowMap::identity(1);
        let id2 = FlowMap::identity(2);
        let r = cov_mflow(&id1, &id2, &prior, &z).unwrap();
        assert!((r.log_density - prior.log_density(&z)).abs() < 1e-15);
        let dbl = FlowMap::new(1, vec![Layer::ActNorm { log_scale: vec![2f64.ln()], shift: vec![0.0] }]).unwrap();
        let r = cov_mflow(&dbl, &id2, &prior, &z).unwrap();
        assert!((r.log_density - (prior.log_density(&z) - 2f64.ln())).abs() < 1e-14);
        let rot = FlowMap::new(2, vec![Layer::rotation(0.7)]).unwrap();
        let r = cov_mflow(&id1, &rot, &prior, &z).unwrap();
        assert!(r.term("-½ log|det(J̃ᵀJ̃)|").unwrap().abs() < 1e-14);
        assert_eq!(mflow_decode(&dbl, &id2, &z), vec![1.2, 0.0]);
    }

    #[test]
    fn hypothetical_encoder_formula_fails_off_manifold() {
        let r_m = DonutTarget::default().r_manifold();
        let dec = CircleDecoder { radius: r_m };
        let prior = circle_prior();
        let on = [r_m * 0.4f64.cos(), r_m * 0.4f64.sin()];
        let off = [(r_m + 1.0) * 0.4f64.cos(), (r_m + 1.0) * 0.4f64.sin()];
        let dec_side = cov_autoencoder(&dec, &prior, &[0.4]).unwrap().log_density;
        let enc_on = hypothetical_encoder_cov(&ArgEncoder, &prior, &on).unwrap().log_density;
        let enc_off = hypothetical_encoder_cov(&ArgEncoder, &prior, &off).unwrap().log_density;
        assert!((enc_on - dec_side).abs() < 1e-12);
        assert!((enc_off - dec_side).abs() > 0.1);
        assert!((enc_off - (-(2.0 * PI).ln() - (r_m + 1.0).ln())).abs() < 1e-12);
    }
}
