use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    /// Final `|b - A x| / |b|`.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient for a symmetric positive-definite operator, warm-started from `x`.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    max_iters: usize,
    tol: f64,
) -> Result<CgReport> {
    let n = b.len();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut rr = dot(&r, &r);
    if !rr.is_finite() {
        return Err(Error::Numerical { iteration: 0, detail: "non-finite CG residual".into() });
    }
    if rr.sqrt() / bnorm <= tol {
        return Ok(CgReport { iterations: 0, relative_residual: rr.sqrt() / bnorm, converged: true });
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap.is_finite()) {
            return Err(Error::Numerical { iteration: it, detail: "non-finite curvature in CG".into() });
        }
        if pap <= 0.0 {
            return Ok(CgReport { iterations: it - 1, relative_residual: rr.sqrt() / bnorm, converged: false });
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::Numerical { iteration: it, detail: "non-finite CG residual".into() });
        }
        let rel = rr_new.sqrt() / bnorm;
        if rel <= tol {
            return Ok(CgReport { iterations: it, relative_residual: rel, converged: true });
        }
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    Ok(CgReport { iterations: max_iters, relative_residual: rr.sqrt() / bnorm, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_small_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        let rep = conjugate_gradient(
            |v, out| {
                for i in 0..3 {
                    out[i] = (0..3).map(|j| a[i][j] * v[j]).sum();
                }
            },
            &b,
            &mut x,
            10,
            1e-12,
        )
        .unwrap();
        assert!(rep.converged && rep.iterations <= 3);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn non_finite_input_is_a_numerical_error() {
        let mut x = [0.0; 2];
        let r = conjugate_gradient(|v, o| o.copy_from_slice(v), &[f64::NAN, 1.0], &mut x, 5, 1e-6);
        assert!(matches!(r, Err(Error::Numerical { .. })));
    }
}
