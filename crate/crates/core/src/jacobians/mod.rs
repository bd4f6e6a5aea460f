//! Stochastic log-determinant and log-determinant-gradient estimators with
//! exact baselines.

pub mod bench;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::dual::{Dual, Dual64, Real};
use crate::numeric::integrate::{mean_and_se, McEstimate};
use crate::numeric::linalg::{cg_solve, spectral_norm};
use crate::numeric::map::{jvp, Map};
use crate::numeric::rng::{std_normal, StreamRng};

pub use bench::{bench_logdet, BenchRow, Strategy};

/// Relative residual at which conjugate gradients stops.
pub const CG_TOL: f64 = 1e-10;
/// Left-inverse tolerance `‖f(g(z)) − z‖` of the solve-free estimator.
pub const LEFT_INVERSE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    #[default]
    Rademacher,
    Gaussian,
}

/// Probe vectors with `E[εεᵀ] = I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeDistribution {
    pub kind: ProbeKind,
    pub dim: usize,
}

impl ProbeDistribution {
    pub fn rademacher(dim: usize) -> Self {
        Self { kind: ProbeKind::Rademacher, dim }
    }

    pub fn gaussian(dim: usize) -> Self {
        Self { kind: ProbeKind::Gaussian, dim }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        match self.kind {
            ProbeKind::Rademacher => (0..self.dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
            ProbeKind::Gaussian => (0..self.dim).map(|_| std_normal(rng)).collect(),
        }
    }
}

fn estimate(values: &[f64]) -> McEstimate {
    let (m, se) = mean_and_se(values);
    McEstimate { estimate: m, std_error: se, n: values.len(), nonfinite: 0 }
}

fn check_probes(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one probe".into()));
    }
    Ok(())
}

/// `(1/M) Σ εᵀ A ε` using only products `v ↦ A v`.
pub fn hutchinson_trace(
    matvec: impl Fn(&[f64]) -> Vec<f64>,
    probe: ProbeDistribution,
    m: usize,
    rng: &mut StreamRng,
) -> Result<McEstimate> {
    check_probes(m)?;
    let mut vals = Vec::with_capacity(m);
    for _ in 0..m {
        let e = probe.sample(rng);
        let av = matvec(&e);
        check_dim(probe.dim, av.len())?;
        vals.push(e.iter().zip(&av).map(|(a, b)| a * b).sum());
    }
    Ok(estimate(&vals))
}

/// Truncation order of the log-determinant power series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub order: usize,
}

impl SeriesConfig {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("series order must be at least 1".into()));
        }
        Ok(Self { order })
    }
}

/// Power-iteration steps for the `‖J − I‖₂ < 1` check.
const SPECTRAL_ITERS: usize = 500;

/// `log|det J| ≈ Σ_{k≤n} (−1)^{k+1} tr((J − I)^k)/k` with Hutchinson traces;
/// each probe is reused across all orders.
pub fn logdet_series(
    j: &DMatrix<f64>,
    cfg: SeriesConfig,
    probe: ProbeDistribution,
    m: usize,
    rng: &mut StreamRng,
) -> Result<McEstimate> {
    if !j.is_square() {
        return Err(Error::InvalidParameter("series needs a square Jacobian".into()));
    }
    check_dim(j.nrows(), probe.dim)?;
    check_probes(m)?;
    let r = j - DMatrix::identity(j.nrows(), j.ncols());
    let norm = spectral_norm(&r, SPECTRAL_ITERS);
    if !(norm < 1.0) {
        return Err(Error::SpectralBound { norm });
    }
    let mut vals = Vec::with_capacity(m);
    for _ in 0..m {
        let e = DVector::from_vec(probe.sample(rng));
        let mut v = e.clone();
        let mut acc = 0.0;
        for k in 1..=cfg.order {
            v = &r * v;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * e.dot(&v) / k as f64;
        }
        vals.push(acc);
    }
    Ok(estimate(&vals))
}

/// Decoder `g_θ: R^C → R^D` with a scalar parameter.
pub trait ParametricDecoder: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval<R: Real>(&self, theta: R, z: &[R]) -> Vec<R>;
}

type D2 = Dual<Dual64>;

/// `(J_g v, ∂_θ(J_g v))` at `(θ, z)` by one nested dual pass.
pub fn jvp_and_theta_derivative<P: ParametricDecoder>(p: &P, theta: f64, z: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let th = D2::new(Dual64::new(theta, 1.0), Dual64::new(0.0, 0.0));
    let zd: Vec<D2> = z.iter().zip(v).map(|(&a, &b)| D2::new(Dual64::new(a, 0.0), Dual64::new(b, 0.0))).collect();
    let y = p.eval(th, &zd);
    (y.iter().map(|u| u.du.re).collect(), y.iter().map(|u| u.du.du).collect())
}

/// `(J_g, ∂_θ J_g)` at `(θ, z)`, column by column.
pub fn jacobian_and_theta_derivative<P: ParametricDecoder>(p: &P, theta: f64, z: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d, c) = (p.dim_out(), p.dim_in());
    let mut j = DMatrix::zeros(d, c);
    let mut dj = DMatrix::zeros(d, c);
    for k in 0..c {
        let mut e = vec![0.0; c];
        e[k] = 1.0;
        let (a, b) = jvp_and_theta_derivative(p, theta, z, &e);
        j.set_column(k, &DVector::from_vec(a));
        dj.set_column(k, &DVector::from_vec(b));
    }
    (j, dj)
}

/// Exact `∂_θ ½ log det(J_gᵀJ_g) = ½ tr((J_gᵀJ_g)⁻¹ ∂_θ(J_gᵀJ_g))`.
pub fn grad_logdet_rect_exact<P: ParametricDecoder>(p: &P, theta: f64, z: &[f64]) -> Result<f64> {
    let (j, dj) = jacobian_and_theta_derivative(p, theta, z);
    let g = j.transpose() * &j;
    let dg = dj.transpose() * &j + j.transpose() * &dj;
    let inv = crate::numeric::linalg::inverse(&g)?;
    Ok(0.5 * (inv * dg).trace())
}

/// `½ εᵀ(J_gᵀJ_g)⁻¹ ∂_θ(J_gᵀJ_g) ε` averaged over probes, with the inverse
/// applied by conjugate gradients.
pub fn grad_logdet_rect_caterini<P: ParametricDecoder>(
    p: &P,
    theta: f64,
    z: &[f64],
    probe: ProbeDistribution,
    m: usize,
    rng: &mut StreamRng,
) -> Result<McEstimate> {
    check_dim(p.dim_in(), z.len())?;
    check_dim(p.dim_in(), probe.dim)?;
    check_probes(m)?;
    let (j, dj) = jacobian_and_theta_derivative(p, theta, z);
    let g = j.transpose() * &j;
    let dg = dj.transpose() * &j + j.transpose() * &dj;
    let max_iter = 10 * p.dim_in();
    let mut vals = Vec::with_capacity(m);
    for _ in 0..m {
        let e = DVector::from_vec(probe.sample(rng));
        let s = cg_solve(&g, &e, CG_TOL, max_iter)?;
        vals.push(0.5 * s.dot(&(&dg * &e)));
    }
    Ok(estimate(&vals))
}

/// `εᵀ J_f ∂_θJ_g ε` averaged over probes, with `J_f` the Jacobian of an
/// exact left-inverse encoder at `g(z)`. No linear solve.
pub fn grad_logdet_rect_sorrenson<P: ParametricDecoder>(
    p: &P,
    encoder: &dyn Map,
    theta: f64,
    z: &[f64],
    probe: ProbeDistribution,
    m: usize,
    rng: &mut StreamRng,
) -> Result<McEstimate> {
    check_dim(p.dim_in(), z.len())?;
    check_dim(p.dim_in(), probe.dim)?;
    check_dim(p.dim_out(), encoder.dim_in())?;
    check_dim(p.dim_in(), encoder.dim_out())?;
    check_probes(m)?;
    let x = p.eval(theta, z);
    let back = encoder.apply(&x);
    let err = back.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if !(err <= LEFT_INVERSE_TOL) {
        return Err(Error::LeftInverse { error: err });
    }
    let mut vals = Vec::with_capacity(m);
    for _ in 0..m {
        let e = probe.sample(rng);
        let (_, djv) = jvp_and_theta_derivative(p, theta, z, &e);
        let u = jvp(encoder, &x, &djv)?;
        vals.push(u.iter().zip(&e).map(|(a, b)| a * b).sum());
    }
    Ok(estimate(&vals))
}

/// `g_θ(z) = W(θ) z` with `W(θ) = W₀ + θ·W₁` or `W(θ) = e^θ W₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearFamily {
    Additive { w0: DMatrix<f64>, w1: DMatrix<f64> },
    Scaled { w0: DMatrix<f64> },
}

impl LinearFamily {
    pub fn matrix(&self, theta: f64) -> DMatrix<f64> {
        match self {
            Self::Additive { w0, w1 } => w0 + w1 * theta,
            Self::Scaled { w0 } => w0 * theta.exp(),
        }
    }

    fn base(&self) -> &DMatrix<f64> {
        match self {
            Self::Additive { w0, .. } | Self::Scaled { w0 } => w0,
        }
    }
}

impl ParametricDecoder for LinearFamily {
    fn dim_in(&self) -> usize {
        self.base().ncols()
    }
    fn dim_out(&self) -> usize {
        self.base().nrows()
    }
    fn eval<R: Real>(&self, theta: R, z: &[R]) -> Vec<R> {
        let w0 = self.base();
        (0..w0.nrows())
            .map(|i| {
                let mut acc = R::cst(0.0);
                for (k, &zk) in z.iter().enumerate() {
                    let coef = match self {
                        Self::Additive { w0, w1 } => theta.scale(w1[(i, k)]) + R::cst(w0[(i, k)]),
                        Self::Scaled { w0 } => theta.exp().scale(w0[(i, k)]),
                    };
                    acc = acc + coef * zk;
                }
                acc
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::linalg::logdet_lu;
    use crate::numeric::map::AffineMap;
    use crate::numeric::rng::seeded;

    fn diag_matvec(d: Vec<f64>) -> impl Fn(&[f64]) -> Vec<f64> {
        move |v| v.iter().zip(&d).map(|(a, b)| a * b).collect()
    }

    #[test]
    fn probes_have_identity_covariance() {
        for probe in [ProbeDistribution::rademacher(3), ProbeDistribution::gaussian(3)] {
            let mut rng = seeded(20);
            let n = 100_000;
            let draws: Vec<Vec<f64>> = (0..n).map(|_| probe.sample(&mut rng)).collect();
            for a in 0..3 {
                for b in 0..3 {
                    let v: Vec<f64> = draws.iter().map(|e| e[a] * e[b]).collect();
                    let (m, se) = mean_and_se(&v);
                    let target = if a == b { 1.0 } else { 0.0 };
                    // 4σ: eighteen entries are checked jointly.
                    assert!((m - target).abs() <= 4.0 * se + 1e-12, "{probe:?} {a}{b} {m} {se}");
                }
            }
        }
    }

    #[test]
    fn hutchinson_identity_and_diagonal() {
        let r = hutchinson_trace(diag_matvec(vec![1.0, 1.0]), ProbeDistribution::rademacher(2), 10, &mut seeded(1)).unwrap();
        assert_eq!(r.estimate, 2.0);
        assert_eq!(r.std_error, 0.0);
        let r = hutchinson_trace(diag_matvec(vec![1.0, 3.0]), ProbeDistribution::gaussian(2), 10_000, &mut seeded(2)).unwrap();
        assert!(r.within(4.0, 3.0));
        let r = hutchinson_trace(diag_matvec(vec![1.0, 3.0]), ProbeDistribution::rademacher(2), 50, &mut seeded(2)).unwrap();
        assert_eq!(r.estimate, 4.0);
    }

    #[test]
    fn hutchinson_random_symmetric() {
        let mut rng = seeded(21);
        let a = DMatrix::from_fn(10, 10, |_, _| std_normal(&mut rng));
        let s = &a + a.transpose() + DMatrix::identity(10, 10) * 10.0;
        let r = hutchinson_trace(|v| (&s * DVector::from_column_slice(v)).as_slice().to_vec(), ProbeDistribution::rademacher(10), 100_000, &mut rng)
            .unwrap();
        assert!((r.estimate - s.trace()).abs() < 0.01 * s.trace().abs());
    }

    #[test]
    fn series_examples() {
        let p = ProbeDistribution::rademacher(2);
        let r = logdet_series(&DMatrix::identity(2, 2), SeriesConfig::new(5).unwrap(), p, 3, &mut seeded(1)).unwrap();
        assert_eq!(r.estimate, 0.0);
        let j = DMatrix::identity(2, 2) * 1.1;
        let r = logdet_series(&j, SeriesConfig::new(8).unwrap(), p, 4, &mut seeded(1)).unwrap();
        assert!((r.estimate - 2.0 * 1.1f64.ln()).abs() < 1e-4);
        assert!(matches!(
            logdet_series(&(DMatrix::identity(2, 2) * 2.5), SeriesConfig::new(3).unwrap(), p, 4, &mut seeded(1)),
            Err(Error::SpectralBound { .. })
        ));
        assert!(SeriesConfig::new(0).is_err());
    }

    #[test]
    fn series_matches_lu_on_contraction() {
        let mut rng = seeded(22);
        let d = 6;
        let r = DMatrix::from_fn(d, d, |_, _| std_normal(&mut rng));
        let r = &r / spectral_norm(&r, 500);
        let j = DMatrix::identity(d, d) + r * 0.3;
        let exact = logdet_lu(&j).unwrap();
        let est = logdet_series(&j, SeriesConfig::new(30).unwrap(), ProbeDistribution::gaussian(d), 20_000, &mut rng).unwrap();
        // Truncation error ≤ Σ_{k>30} d·0.3^k/k, far below the MC error.
        assert!(est.within(exact, 3.0), "{est:?} {exact}");
    }

    fn theta_w11() -> LinearFamily {
        let mut w0 = DMatrix::zeros(3, 2);
        w0[(1, 1)] = 1.0;
        let mut w1 = DMatrix::zeros(3, 2);
        w1[(0, 0)] = 1.0;
        LinearFamily::Additive { w0, w1 }
    }

    fn pinv(w: &DMatrix<f64>) -> AffineMap {
        AffineMap::linear(crate::numeric::linalg::inverse(&(w.transpose() * w)).unwrap() * w.transpose())
    }

    #[test]
    fn rectangular_gradients_on_linear_decoders() {
        let z = [0.3, -0.8];
        let g = ProbeDistribution::gaussian(2);
        // W₁₁ = θ at θ = 2: gradient 1/θ.
        let fam = theta_w11();
        assert!((grad_logdet_rect_exact(&fam, 2.0, &z).unwrap() - 0.5).abs() < 1e-14);
        let c = grad_logdet_rect_caterini(&fam, 2.0, &z, g, 10_000, &mut seeded(23)).unwrap();
        assert!(c.within(0.5, 3.0), "{c:?}");
        let s = grad_logdet_rect_sorrenson(&fam, &pinv(&fam.matrix(2.0)), 2.0, &z, g, 10_000, &mut seeded(24)).unwrap();
        assert!(s.within(0.5, 3.0), "{s:?}");
        let diff = (c.estimate - s.estimate).abs();
        assert!(diff <= 3.0 * (c.std_error.powi(2) + s.std_error.powi(2)).sqrt());
        // Orthonormal columns scaled by e^θ: gradient C.
        let (sn, cs) = 0.4f64.sin_cos();
        let w0 = DMatrix::from_row_slice(3, 2, &[cs, 0.0, sn, 0.0, 0.0, 1.0]);
        let fam = LinearFamily::Scaled { w0: w0.clone() };
        assert!((grad_logdet_rect_exact(&fam, 0.0, &z).unwrap() - 2.0).abs() < 1e-14);
        let c = grad_logdet_rect_caterini(&fam, 0.0, &z, g, 10_000, &mut seeded(25)).unwrap();
        assert!(c.within(2.0, 3.0));
        let s = grad_logdet_rect_sorrenson(&fam, &pinv(&w0), 0.0, &z, g, 10_000, &mut seeded(26)).unwrap();
        assert!(s.within(2.0, 3.0));
        // θ does not enter W.
        let fam = LinearFamily::Additive { w0: w0.clone(), w1: DMatrix::zeros(3, 2) };
        let c = grad_logdet_rect_caterini(&fam, 0.7, &z, g, 100, &mut seeded(27)).unwrap();
        let s = grad_logdet_rect_sorrenson(&fam, &pinv(&w0), 0.7, &z, g, 100, &mut seeded(27)).unwrap();
        assert_eq!((c.estimate, s.estimate), (0.0, 0.0));
    }

    #[test]
    fn sorrenson_single_probe_unbiased() {
        let fam = theta_w11();
        let enc = pinv(&fam.matrix(2.0));
        let mut rng = seeded(28);
        let vals: Vec<f64> = (0..10_000)
            .map(|_| {
                grad_logdet_rect_sorrenson(&fam, &enc, 2.0, &[0.1, 0.2], ProbeDistribution::gaussian(2), 1, &mut rng)
                    .unwrap()
                    .estimate
            })
            .collect();
        let (m, se) = mean_and_se(&vals);
        assert!((m - 0.5).abs() <= 3.0 * se, "{m} {se}");
    }

    #[test]
    fn sorrenson_rejects_wrong_encoder() {
        let fam = theta_w11();
        let bad = pinv(&fam.matrix(2.5));
        let r = grad_logdet_rect_sorrenson(&fam, &bad, 2.0, &[1.0, 1.0], ProbeDistribution::gaussian(2), 10, &mut seeded(1));
        assert!(matches!(r, Err(Error::LeftInverse { .. })));
    }

    #[test]
    fn nested_dual_matches_finite_difference() {
        let fam = theta_w11();
        let (_, dj) = jacobian_and_theta_derivative(&fam, 2.0, &[0.3, 0.4]);
        let h = 1e-6;
        let fd = (fam.matrix(2.0 + h) - fam.matrix(2.0 - h)) / (2.0 * h);
        assert!((dj - fd).abs().max() < 1e-8);
    }
}
