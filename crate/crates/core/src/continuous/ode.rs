//! ODE transport with the instantaneous change of variables.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::numeric::density::Density;
use crate::numeric::dual::{Dual64, Real};
use crate::numeric::report::CovReport;
use crate::numeric::rng::seeded;

/// Norm beyond which a trajectory is considered to have blown up.
pub const BLOW_UP_NORM: f64 = 1e8;

/// Time-dependent vector field `F(t, z)` on `R^C`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval<R: Real>(&self, t: f64, z: &[R]) -> Vec<R>;
}

/// `F(t, z) = a·z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearField {
    pub dim: usize,
    pub rate: f64,
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval<R: Real>(&self, _t: f64, z: &[R]) -> Vec<R> {
        z.iter().map(|v| v.scale(self.rate)).collect()
    }
}

/// `G(t, z) = −F(T − t, z)`: runs `F` backwards in time.
pub struct Reversed<'a, F: VectorField> {
    pub field: &'a F,
    pub horizon: f64,
}

impl<F: VectorField> VectorField for Reversed<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn eval<R: Real>(&self, t: f64, z: &[R]) -> Vec<R> {
        self.field.eval(self.horizon - t, z).into_iter().map(|v| -v).collect()
    }
}

/// How `tr ∂F/∂z` is evaluated along the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceMode {
    /// One dual pass per coordinate.
    Exact,
    /// `vᵀ J v` averaged over Rademacher probes drawn once per trajectory.
    Hutchinson { probes: usize, seed: u64 },
    /// Transport only; the trace integral is reported as zero.
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub endpoint: Vec<f64>,
    /// `∫ tr ∂F/∂z dt` along the trajectory, signed by the direction of
    /// integration.
    pub trace_integral: f64,
}

fn trace<F: VectorField>(field: &F, t: f64, z: &[f64], mode: TraceMode, probes: &[Vec<f64>]) -> f64 {
    if mode == TraceMode::Off {
        0.0
    } else if probes.is_empty() {
        let mut tr = 0.0;
        for i in 0..z.len() {
            let zd: Vec<Dual64> = z
                .iter()
                .enumerate()
                .map(|(k, &v)| Dual64::new(v, if k == i { 1.0 } else { 0.0 }))
                .collect();
            tr += field.eval(t, &zd)[i].du;
        }
        tr
    } else {
        let mut acc = 0.0;
        for v in probes {
            let zd: Vec<Dual64> = z.iter().zip(v).map(|(&a, &b)| Dual64::new(a, b)).collect();
            let jv = field.eval(t, &zd);
            acc += jv.iter().zip(v).map(|(a, b)| a.du * b).sum::<f64>();
        }
        acc / probes.len() as f64
    }
}

/// Classic RK4 on the augmented state `(z, ∫ tr ∂F/∂z)` from `t0` to `t1`
/// (either order).
pub fn integrate_flow<F: VectorField>(
    field: &F,
    start: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
    mode: TraceMode,
) -> Result<FlowResult> {
    check_dim(field.dim(), start.len())?;
    if steps == 0 {
        return Err(Error::InvalidParameter("integrate_flow needs steps >= 1".into()));
    }
    let probes: Vec<Vec<f64>> = match mode {
        TraceMode::Exact | TraceMode::Off => Vec::new(),
        TraceMode::Hutchinson { probes, seed } => {
            let mut rng = seeded(seed);
            (0..probes.max(1))
                .map(|_| (0..start.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
                .collect()
        }
    };
    let h = (t1 - t0) / steps as f64;
    let d = start.len();
    let rhs = |t: f64, z: &[f64]| -> (Vec<f64>, f64) { (field.eval(t, z), trace(field, t, z, mode, &probes)) };
    let mut z = start.to_vec();
    let mut acc = 0.0;
    let axpy = |z: &[f64], k: &[f64], c: f64| -> Vec<f64> { z.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    for s in 0..steps {
        let t = t0 + h * s as f64;
        let (k1, l1) = rhs(t, &z);
        let (k2, l2) = rhs(t + 0.5 * h, &axpy(&z, &k1, 0.5 * h));
        let (k3, l3) = rhs(t + 0.5 * h, &axpy(&z, &k2, 0.5 * h));
        let (k4, l4) = rhs(t + h, &axpy(&z, &k3, h));
        for i in 0..d {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        acc += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= BLOW_UP_NORM) {
            return Err(Error::TrajectoryBlowUp { t: t + h, norm });
        }
    }
    Ok(FlowResult { endpoint: z, trace_integral: acc })
}

/// Encoder integrates `x` from `t = 0` to `t = horizon`:
/// `log p(x) = log p(Z = z(horizon)) + ∫₀^horizon tr ∂F/∂z dt`.
pub fn cov_continuous<F: VectorField>(
    field: &F,
    prior: &dyn Density,
    x: &[f64],
    horizon: f64,
    steps: usize,
    mode: TraceMode,
) -> Result<CovReport> {
    check_dim(field.dim(), prior.dim())?;
    let r = integrate_flow(field, x, 0.0, horizon, steps, mode)?;
    Ok(CovReport::from_terms([
        ("log p(Z=f(x))", prior.log_density(&r.endpoint)),
        ("∫ tr ∂F/∂z dt", r.trace_integral),
    ]))
}

/// Decoder: integrate a code from `t = horizon` back to `t = 0`.
pub fn decode_continuous<F: VectorField>(field: &F, z: &[f64], horizon: f64, steps: usize) -> Result<Vec<f64>> {
    Ok(integrate_flow(field, z, horizon, 0.0, steps, TraceMode::Off)?.endpoint)
}
