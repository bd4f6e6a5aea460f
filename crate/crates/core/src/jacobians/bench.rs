//! Timing and accuracy of log-determinant strategies against the LU baseline.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{logdet_series, ProbeDistribution, SeriesConfig};
use crate::bijective::{knothe_rosenblatt_apply, random_coupling_stack, TriangularCoord, TriangularMap};
use crate::error::{Error, Result};
use crate::numeric::dual::Real;
use crate::numeric::linalg::{logdet_lu, spectral_norm};
use crate::numeric::map::{jacobian, DiffConfig, Map, Smooth};
use crate::numeric::rng::{seeded, std_normal};

/// Coupling layers in the layer-product and exact-LU workloads.
pub const BENCH_LAYERS: usize = 8;
/// Residual gain `c` of the series workload.
pub const RESIDUAL_GAIN: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Dual Jacobian of a coupling stack, then LU.
    ExactLu,
    /// Product of diagonal entries of a random triangular map.
    Triangular,
    /// Sum of per-layer log-determinants of a coupling stack.
    LayerProduct,
    /// Truncated power series with Hutchinson traces on a residual map.
    HutchinsonSeries { order: usize, probes: usize },
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Self::ExactLu => "exact_lu".into(),
            Self::Triangular => "triangular".into(),
            Self::LayerProduct => "layer_product".into(),
            Self::HutchinsonSeries { order, .. } => format!("hutchinson_series_n{order}"),
        }
    }

    pub fn defaults() -> Vec<Self> {
        let mut v = vec![Self::ExactLu, Self::Triangular, Self::LayerProduct];
        v.extend([2, 4, 8].map(|order| Self::HutchinsonSeries { order, probes: 64 }));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: String,
    pub dim: usize,
    pub mean_ns: f64,
    /// `|estimate − LU| / max(1, |LU|)`.
    pub rel_error: f64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "strategy,dim,mean_ns,rel_error";

    pub fn csv_line(&self) -> String {
        format!("{},{},{:.1},{:e}", self.strategy, self.dim, self.mean_ns, self.rel_error)
    }
}

/// Rows rendered as CSV with a header line.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BenchRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// `x ↦ x + c·tanh(Ax + b)` with `A` symmetric positive definite of unit
/// spectral norm, so `‖J − I‖₂ ≤ c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl ResidualMap {
    pub fn random(dim: usize, c: f64, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let r = DMatrix::from_fn(dim, dim, |_, _| std_normal(&mut rng));
        let spd = r.transpose() * &r + DMatrix::identity(dim, dim);
        let a = &spd / spectral_norm(&spd, 1000);
        let b = (0..dim).map(|_| 0.5 * std_normal(&mut rng)).collect();
        Self { a, b, c }
    }
}

impl Smooth for ResidualMap {
    fn dim_in(&self) -> usize {
        self.b.len()
    }
    fn dim_out(&self) -> usize {
        self.b.len()
    }
    fn eval<R: Real>(&self, x: &[R]) -> Vec<R> {
        let d = self.b.len();
        (0..d)
            .map(|i| {
                let mut acc = R::cst(self.b[i]);
                for (j, &xj) in x.iter().enumerate() {
                    acc = acc + xj.scale(self.a[(i, j)]);
                }
                x[i] + acc.tanh().scale(self.c)
            })
            .collect()
    }
}

/// Random lower-triangular affine map with positive diagonal.
pub fn random_triangular(dim: usize, seed: u64) -> TriangularMap {
    let mut rng = seeded(seed);
    let coords = (0..dim)
        .map(|j| {
            let scale = rng.random_range(0.5..2.0);
            TriangularCoord::affine(scale, (0..j).map(|_| rng.random_range(-0.5..0.5)).collect())
        })
        .collect();
    TriangularMap { coords }
}

fn lu_of(map: &dyn Map, at: &[f64]) -> Result<f64> {
    logdet_lu(&jacobian(map, at, DiffConfig::DUAL)?)
}

fn rel(est: f64, exact: f64) -> f64 {
    (est - exact).abs() / exact.abs().max(1.0)
}

fn timed<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let reps = reps.max(1);
    let start = Instant::now();
    let mut last = f()?;
    for _ in 1..reps {
        last = f()?;
    }
    Ok((last, start.elapsed().as_nanos() as f64 / reps as f64))
}

/// One row per `(strategy, dim)`. Workloads are seeded by `dim`.
pub fn bench_logdet(strategies: &[Strategy], dims: &[usize], reps: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &dim in dims {
        if dim == 0 {
            return Err(Error::InvalidParameter("benchmark dimension must be positive".into()));
        }
        let seed = 1000 + dim as u64;
        let mut rng = seeded(seed);
        let z: Vec<f64> = (0..dim).map(|_| std_normal(&mut rng)).collect();
        for &s in strategies {
            let (est, exact, mean_ns) = match s {
                Strategy::ExactLu => {
                    let flow = random_coupling_stack(dim, BENCH_LAYERS, seed)?;
                    let (v, ns) = timed(reps, || lu_of(&flow, &z))?;
                    (v, v, ns)
                }
                Strategy::Triangular => {
                    let map = random_triangular(dim, seed);
                    let (v, ns) = timed(reps, || knothe_rosenblatt_apply(&map, &z).map(|r| r.1))?;
                    (v, lu_of(&map, &z)?, ns)
                }
                Strategy::LayerProduct => {
                    let flow = random_coupling_stack(dim, BENCH_LAYERS, seed)?;
                    let (v, ns) = timed(reps, || flow.forward_with_logdet(&z).map(|r| r.1))?;
                    (v, lu_of(&flow, &z)?, ns)
                }
                Strategy::HutchinsonSeries { order, probes } => {
                    let map = ResidualMap::random(dim, RESIDUAL_GAIN, seed);
                    let cfg = SeriesConfig::new(order)?;
                    let probe = ProbeDistribution::rademacher(dim);
                    let (v, ns) = timed(reps, || {
                        let j = jacobian(&map, &z, DiffConfig::DUAL)?;
                        logdet_series(&j, cfg, probe, probes, &mut seeded(seed)).map(|e| e.estimate)
                    })?;
                    (v, lu_of(&map, &z)?, ns)
                }
            };
            rows.push(BenchRow { strategy: s.name(), dim, mean_ns, rel_error: rel(est, exact) });
        }
    }
    Ok(rows)
}

/// Deterministic bias `|Σ_{k≤n} (−1)^{k+1} tr((J−I)^k)/k − log det J|` of the
/// truncated series, traces computed exactly.
pub fn series_truncation_error(j: &DMatrix<f64>, order: usize) -> Result<f64> {
    let d = j.nrows();
    let r = j - DMatrix::identity(d, d);
    let mut p = DMatrix::identity(d, d);
    let mut acc = 0.0;
    for k in 1..=order {
        p = &p * &r;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        acc += sign * p.trace() / k as f64;
    }
    Ok((acc - logdet_lu(j)?).abs())
}
