//! Small dense linear algebra: pivoted-LU log-determinants, power iteration
//! and conjugate gradients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivots below this fraction of the largest entry count as rank deficiency.
pub const PIVOT_RTOL: f64 = 1e-12;

/// `(log|det m|, sign)` via partial-pivot LU.
pub fn logdet_lu_signed(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !m.is_square() {
        return Err(Error::InvalidParameter(format!(
            "logdet of non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !scale.is_finite() {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let threshold = PIVOT_RTOL * scale;
    if n == 0 {
        return Ok((0.0, 1.0));
    }
    let mut a = m.clone();
    let mut logdet = 0.0;
    let mut sign = 1.0;
    for k in 0..n {
        let (p, pv) = (k..n)
            .map(|i| (i, a[(i, k)].abs()))
            .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if pv <= threshold || pv == 0.0 {
            return Err(Error::RankDeficient { pivot: pv, threshold });
        }
        if p != k {
            a.swap_rows(p, k);
            sign = -sign;
        }
        let piv = a[(k, k)];
        if piv < 0.0 {
            sign = -sign;
        }
        logdet += piv.abs().ln();
        for i in k + 1..n {
            let f = a[(i, k)] / piv;
            if f != 0.0 {
                for j in k + 1..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
    }
    Ok((logdet, sign))
}

/// `log|det m|` via pivoted LU.
pub fn logdet_lu(m: &DMatrix<f64>) -> Result<f64> {
    logdet_lu_signed(m).map(|(l, _)| l)
}

/// `½ log det(JᵀJ)` for a tall Jacobian with full column rank.
pub fn half_logdet_gram(j: &DMatrix<f64>) -> Result<f64> {
    let g = j.transpose() * j;
    logdet_lu(&g).map(|l| 0.5 * l)
}

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    logdet_lu(a)?;
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::RankDeficient { pivot: 0.0, threshold: 0.0 })
}

pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    logdet_lu(a)?;
    a.clone()
        .try_inverse()
        .ok_or(Error::RankDeficient { pivot: 0.0, threshold: 0.0 })
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn spectral_norm(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    // Deterministic start that is unlikely to be orthogonal to the top vector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64).sin());
    v /= v.norm();
    let ata = a.transpose() * a;
    let mut sigma2 = 0.0;
    for _ in 0..iters {
        let w = &ata * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw;
        v = w / nw;
        if (next - sigma2).abs() <= 1e-15 * next {
            sigma2 = next;
            break;
        }
        sigma2 = next;
    }
    sigma2.sqrt()
}

/// Conjugate gradients for symmetric positive definite `a`.
pub fn cg_solve(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(b.len());
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..max_iter {
        let ap = a * &p;
        let alpha = rr / p.dot(&ap);
        x += alpha * &p;
        r -= alpha * &ap;
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        p = &r + (rr_new / rr) * &p;
        rr = rr_new;
    }
    Err(Error::NonConvergence(format!(
        "conjugate gradients: residual {:e} after {max_iter} iterations",
        rr.sqrt() / bnorm
    )))
}
