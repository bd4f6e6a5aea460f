//! Self-consistency checks, normalization oracles and trade-off metrics.

pub mod tradeoff;

use std::thread;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::injective::FiniteCodebook;
use crate::numeric::density::Density;
use crate::numeric::integrate::{mean_and_se, McEstimate, MAX_NONFINITE_FRACTION};
use crate::numeric::map::Map;
use crate::numeric::rng::{RngStream, StreamRng};
use crate::stochastic::{kl_variance_diagnostic, ConditionalKernel};

pub use tradeoff::{
    energy_distance, histogram_kl, tradeoff_metrics, DeterministicPair, Distance, Divergence, DonutFiberResample,
    GaussianFiberResample,    KmeansReconstruction, Reconstructor, StochasticPair, TradeoffMetrics,
};

/// Environment variable capping worker threads of Monte-Carlo loops.
pub const THREADS_ENV: &str = "COVKIT_THREADS";
/// Target points at which the KL-variance score is evaluated.
pub const KL_POINTS: usize = 8;
/// Score-to-standard-error ratio at which a KL-variance score is flagged.
pub const KL_FLAG_SIGMAS: f64 = 5.0;
/// Scores below this are rounding noise and never flagged.
pub const KL_SCORE_FLOOR: f64 = 1e-12;
/// Work units of the parallel Monte-Carlo loop. Fixed so results do not
/// depend on the thread count.
const MC_CHUNKS: usize = 64;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Largest round-trip error that counts as an inconsistency:
    /// `‖f(g(z)) − z‖` when `C ≤ D`, `‖g(f(x)) − x‖` when `C ≥ D`.
    #[serde(with = "crate::numeric::report::log_f64")]
    pub max_round_trip_error: f64,
    /// `max ‖g(f(x)) − x‖` for a bottleneck (`C < D`): distance to the
    /// decoder manifold, reported but not an inconsistency.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::numeric::report::opt_log_f64")]
    pub max_projection_error: Option<f64>,
    /// `max |log p*(x) + log p(z|x) − log p(z) − log p(x|z)|`.
    #[serde(with = "crate::numeric::report::log_f64")]
    pub max_log_discrepancy: f64,
    #[serde(with = "crate::numeric::report::log_f64")]
    pub kl_variance_score: f64,
    #[serde(with = "crate::numeric::report::log_f64")]
    pub kl_variance_std_error: f64,
    pub n_codes: usize,
    pub n_points: usize,
    pub n_pairs: usize,
    pub n_kl_draws: usize,
}

impl ConsistencyReport {
    pub fn kl_flagged(&self) -> bool {
        self.kl_variance_score > (KL_FLAG_SIGMAS * self.kl_variance_std_error).max(KL_SCORE_FLOOR)
    }

    /// Names of the checks exceeding `tol` (the KL score by its 5σ rule).
    pub fn failures(&self, tol: f64) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.max_round_trip_error <= tol) {
            out.push("round_trip");
        }
        if !(self.max_log_discrepancy <= tol) {
            out.push("joint_density");
        }
        if self.n_kl_draws > 0 && self.kl_flagged() {
            out.push("kl_variance");
        }
        out
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Round trips of a deterministic pair `f: R^D → R^C`, `g: R^C → R^D` over
/// the given codes and points.
pub fn check_deterministic_consistency(
    encoder: &dyn Map,
    decoder: &dyn Map,
    codes: &[Vec<f64>],
    points: &[Vec<f64>],
) -> Result<ConsistencyReport> {
    let (d, c) = (encoder.dim_in(), encoder.dim_out());
    check_dim(c, decoder.dim_in())?;
    check_dim(d, decoder.dim_out())?;
    let mut code_err: f64 = 0.0;
    for z in codes {
        check_dim(c, z.len())?;
        code_err = code_err.max(dist(&encoder.apply(&decoder.apply(z)), z));
    }
    let mut data_err: f64 = 0.0;
    for x in points {
        check_dim(d, x.len())?;
        data_err = data_err.max(dist(&decoder.apply(&encoder.apply(x)), x));
    }
    let mut r = ConsistencyReport { n_codes: codes.len(), n_points: points.len(), ..Default::default() };
    if c <= d {
        r.max_round_trip_error = code_err;
    }
    if c >= d {
        r.max_round_trip_error = r.max_round_trip_error.max(data_err);
    } else if !points.is_empty() {
        r.max_projection_error = Some(data_err);
    }
    if r.max_round_trip_error.is_nan() {
        return Err(Error::NonFinite("round-trip error".into()));
    }
    Ok(r)
}

/// Joint-density discrepancy over `n` pairs `x ~ p*`, `z ~ p(z|x)`, plus
/// the KL-variance score averaged over the first [`KL_POINTS`] targets with
/// `n` encoder draws each.
pub fn check_stochastic_consistency(
    prior: &dyn Density,
    encoder: &dyn ConditionalKernel,
    decoder: &dyn ConditionalKernel,
    target: &dyn Density,
    n: usize,
    rng: &mut StreamRng,
) -> Result<ConsistencyReport> {
    check_dim(prior.dim(), encoder.target_dim())?;
    check_dim(target.dim(), encoder.cond_dim())?;
    check_dim(target.dim(), decoder.target_dim())?;
    check_dim(prior.dim(), decoder.cond_dim())?;
    if n < 2 {
        return Err(Error::InvalidParameter("consistency check needs n >= 2".into()));
    }
    let mut worst: f64 = 0.0;
    let mut xs = Vec::with_capacity(KL_POINTS);
    for i in 0..n {
        let x = target.sample(rng);
        let z = encoder.sample(&x, rng);
        let lhs = target.log_density(&x) + encoder.log_density(&z, &x);
        let rhs = prior.log_density(&z) + decoder.log_density(&x, &z);
        let gap = if lhs == rhs { 0.0 } else { (lhs - rhs).abs() };
        if gap.is_nan() {
            return Err(Error::NonFinite(format!("joint log-densities at pair {i}")));
        }
        worst = worst.max(gap);
        if xs.len() < KL_POINTS {
            xs.push(x);
        }
    }
    let mut scores = Vec::with_capacity(xs.len());
    let mut var = 0.0;
    for x in &xs {
        let s = kl_variance_diagnostic(prior, decoder, encoder, x, n, rng)?;
        scores.push(s.score);
        var += s.std_error * s.std_error;
    }
    let k = scores.len() as f64;
    Ok(ConsistencyReport {
        max_log_discrepancy: worst,
        kl_variance_score: scores.iter().sum::<f64>() / k,
        kl_variance_std_error: var.sqrt() / k,
        n_pairs: n,
        n_kl_draws: n * xs.len(),
        ..Default::default()
    })
}

/// Thread cap from `COVKIT_THREADS`, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |t| t.get()))
}

/// Uniform Monte-Carlo estimate of `∫_box exp(log_density)`. Draws are split
/// into fixed chunks on independent streams of one seed taken from `rng`,
/// so the result is identical for every thread count.
pub fn check_normalization(
    log_density: &(dyn Fn(&[f64]) -> f64 + Sync),
    lo: &[f64],
    hi: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> Result<McEstimate> {
    check_normalization_threads(log_density, lo, hi, n, rng, thread_count())
}

/// [`check_normalization`] with an explicit thread count.
pub fn check_normalization_threads(
    log_density: &(dyn Fn(&[f64]) -> f64 + Sync),
    lo: &[f64],
    hi: &[f64],
    n: usize,
    rng: &mut StreamRng,
    threads: usize,
) -> Result<McEstimate> {
    check_dim(lo.len(), hi.len())?;
    if n < 2 {
        return Err(Error::InvalidParameter("check_normalization needs n >= 2".into()));
    }
    let mut volume = 1.0;
    for (a, b) in lo.iter().zip(hi) {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidParameter(format!("integration box [{a}, {b}]")));
        }
        volume *= b - a;
    }
    let stream = RngStream::new(rng.random());
    let chunk = |k: usize| -> (Vec<f64>, usize) {
        let len = n / MC_CHUNKS + usize::from(k < n % MC_CHUNKS);
        let mut r = stream.substream(k as u64);
        let mut vals = Vec::with_capacity(len);
        let mut bad = 0;
        let mut x = vec![0.0; lo.len()];
        for _ in 0..len {
            for (xi, (a, b)) in x.iter_mut().zip(lo.iter().zip(hi)) {
                *xi = r.random_range(*a..*b);
            }
            let v = log_density(&x).exp() * volume;
            if v.is_finite() {
                vals.push(v);
            } else {
                bad += 1;
            }
        }
        (vals, bad)
    };
    let threads = threads.clamp(1, MC_CHUNKS);
    let mut parts: Vec<(Vec<f64>, usize)> = vec![(Vec::new(), 0); MC_CHUNKS];
    thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let chunk = &chunk;
                s.spawn(move || (t..MC_CHUNKS).step_by(threads).map(|k| (k, chunk(k))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (k, p) in h.join().expect("worker panicked") {
                parts[k] = p;
            }
        }
    });
    let nonfinite: usize = parts.iter().map(|p| p.1).sum();
    if nonfinite as f64 > MAX_NONFINITE_FRACTION * n as f64 {
        return Err(Error::TooManyNonFinite { count: nonfinite, n });
    }
    let vals: Vec<f64> = parts.into_iter().flat_map(|p| p.0).collect();
    let (m, se) = mean_and_se(&vals);
    Ok(McEstimate { estimate: m, std_error: se, n, nonfinite })
}

/// `Σ_k p(Z=k)`; one up to rounding for any validated codebook.
pub fn codebook_mass(codebook: &FiniteCodebook) -> f64 {
    codebook.priors.iter().sum()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use nalgebra::DMatrix;

    use super::*;
    use crate::analytic::{gaussian_bijective_pair, AnisotropicGaussian, DonutModels, DonutTarget, GaussianStochastic};
    use crate::bijective::{cov_bijective, FlowMap, Layer};
    use crate::injective::{ArgEncoder, CircleDecoder};
    use crate::numeric::density::StandardNormal;
    use crate::numeric::map::AffineMap;
    use crate::numeric::rng::seeded;
    use crate::split::{cov_split, DonutSplit};
    use crate::stochastic::GaussianKernel;

    #[test]
    fn gaussian_pair_round_trips() {
        let (f, g) = gaussian_bijective_pair();
        let codes = vec![vec![0.3, -1.0], vec![2.0, 0.5]];
        let r = check_deterministic_consistency(&f, &g, &codes, &codes).unwrap();
        assert_eq!(r.max_round_trip_error, 0.0);
        assert!(r.failures(1e-12).is_empty());
        let g2 = AffineMap::linear(DMatrix::from_row_slice(2, 2, &[1.01, 0.0, 0.0, 0.505]));
        let r = check_deterministic_consistency(&f, &g2, &codes, &[]).unwrap();
        let expected = codes.iter().map(|z| 0.01 * z[0].hypot(z[1])).fold(0.0, f64::max);
        assert!((r.max_round_trip_error - expected).abs() < 1e-12);
        assert_eq!(r.failures(1e-6), vec!["round_trip"]);
    }

    #[test]
    fn donut_autoencoder_round_trips() {
        let t = DonutTarget::default();
        let rm = t.r_manifold();
        let dec = CircleDecoder { radius: rm };
        let codes: Vec<Vec<f64>> = (0..20).map(|i| vec![0.3 * i as f64]).collect();
        let mut rng = seeded(40);
        let points: Vec<Vec<f64>> = (0..200).map(|_| t.sample(&mut rng)).collect();
        let r = check_deterministic_consistency(&ArgEncoder, &dec, &codes, &points).unwrap();
        assert!(r.max_round_trip_error < 1e-12);
        let proj = points.iter().map(|x| (x[0].hypot(x[1]) - rm).abs()).fold(0.0, f64::max);
        assert!((r.max_projection_error.unwrap() - proj).abs() < 1e-12);
        assert!(proj > 1.0);
    }

    #[test]
    fn gaussian_stochastic_is_consistent() {
        for &rho in &[0.1, 0.5, 0.9] {
            let m = GaussianStochastic::new(rho).unwrap();
            let r = check_stochastic_consistency(&m.prior(), &m.encoder(), &m.decoder(), &AnisotropicGaussian, 2000, &mut seeded(41))
                .unwrap();
            assert!(r.max_log_discrepancy < 1e-10, "{r:?}");
            assert!(r.kl_variance_score < 1e-20 && !r.kl_flagged());
        }
    }

    #[test]
    fn donut_vae_is_consistent() {
        let m = DonutModels::default();
        let r = check_stochastic_consistency(&m.angle_prior(), &m.vae_encoder(), &m.vae_decoder(), &m.target, 5000, &mut seeded(42))
            .unwrap();
        assert!(r.max_log_discrepancy < 1e-10, "{r:?}");
        assert!(r.failures(1e-10).is_empty());
    }

    #[test]
    fn widened_encoder_is_flagged() {
        let m = GaussianStochastic::new(0.6).unwrap();
        let s = (1.2 * (1.0 - 0.36f64)).sqrt();
        let enc = GaussianKernel::linear(vec![vec![0.6, 0.0]], vec![0.0], vec![s]).unwrap();
        let prior = m.prior();
        let dec = m.decoder();
        let mut rng = seeded(43);
        let r = check_stochastic_consistency(&prior, &enc, &dec, &AnisotropicGaussian, 10_000, &mut rng).unwrap();
        assert!(r.kl_flagged(), "{r:?}");
        assert!(r.failures(1e-8).contains(&"joint_density"));
        // Every pair is off.
        for _ in 0..200 {
            let x = AnisotropicGaussian.sample(&mut rng);
            let z = enc.sample(&x, &mut rng);
            let gap = AnisotropicGaussian.log_density(&x) + enc.log_density(&z, &x)
                - prior.log_density(&z)
                - dec.log_density(&x, &z);
            assert!(gap.abs() > 0.0);
        }
    }

    #[test]
    fn normalization_examples() {
        let flow = FlowMap::new(2, vec![Layer::DonutNf { r0: 3.0, r1: 8.0 }]).unwrap();
        let prior = StandardNormal::new(2);
        let f = |x: &[f64]| cov_bijective(&flow, &prior, x).map_or(f64::NAN, |r| r.log_density);
        let est = check_normalization(&f, &[-9.0; 2], &[9.0; 2], 200_000, &mut seeded(44)).unwrap();
        assert!(est.within(1.0, 3.0), "{est:?}");
        let g = |x: &[f64]| AnisotropicGaussian.log_density(x);
        let est = check_normalization(&g, &[-6.0, -3.0], &[6.0, 3.0], 200_000, &mut seeded(45)).unwrap();
        assert!(est.within(1.0, 3.0), "{est:?}");
        let split = DonutSplit::default();
        let h = |x: &[f64]| cov_split(&split, x).map_or(f64::NAN, |r| r.log_density);
        let est = check_normalization(&h, &[-9.0; 2], &[9.0; 2], 200_000, &mut seeded(46)).unwrap();
        assert!(est.within(1.0, 3.0), "{est:?}");
        let cb = FiniteCodebook::new(vec![vec![0.0], vec![1.0], vec![3.0]], vec![0.2, 0.3, 0.5]).unwrap();
        assert!((codebook_mass(&cb) - 1.0).abs() < 1e-15);
        assert!(check_normalization(&g, &[1.0], &[0.0], 10, &mut seeded(1)).is_err());
    }

    #[test]
    fn normalization_independent_of_threads() {
        let g = |x: &[f64]| -(x[0] * x[0]) / 2.0 - 0.5 * (2.0 * PI).ln();
        let a = check_normalization_threads(&g, &[-5.0], &[5.0], 10_001, &mut seeded(47), 1).unwrap();
        let b = check_normalization_threads(&g, &[-5.0], &[5.0], 10_001, &mut seeded(47), 7).unwrap();
        assert_eq!(a, b);
        assert!(a.within(1.0, 3.0));
        assert_eq!(a.n, 10_001);
    }
}
