use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::cg::conjugate_gradient;
use super::tv::{self, TvDual, TvSettings};

/// Classical image priors with a proximal operator
/// `prox(z, tau) = argmin_x 1/2 |x - z|^2 + tau R(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    None,
    /// `R(x) = 1/2 |grad x|^2`.
    Tikhonov,
    /// Isotropic total variation, per channel.
    Tv(TvSettings),
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Tv(TvSettings::default())
    }
}

impl Prior {
    pub fn tv() -> Self {
        Prior::Tv(TvSettings::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Prior::None => "none",
            Prior::Tikhonov => "tikhonov",
            Prior::Tv(_) => "tv",
        }
    }

    /// `R(x)` for an interleaved `h x w x 3` image.
    pub fn value(&self, x: &[f64], dims: (usize, usize)) -> f64 {
        let (h, w) = dims;
        match self {
            Prior::None => 0.0,
            Prior::Tikhonov => {
                let n = x.len();
                let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
                tv::gradient(x, h, w, 3, &mut gx, &mut gy);
                0.5 * gx.iter().chain(&gy).map(|v| v * v).sum::<f64>()
            }
            Prior::Tv(_) => tv::tv_value(x, h, w, 3),
        }
    }

    pub fn prox(&self, z: &[f64], dims: (usize, usize), tau: f64) -> Vec<f64> {
        self.prox_with(z, dims, tau, &mut ProxWorkspace::default())
    }

    /// Proximal operator reusing warm-start state from earlier calls.
    pub fn prox_with(&self, z: &[f64], dims: (usize, usize), tau: f64, ws: &mut ProxWorkspace) -> Vec<f64> {
        let (h, w) = dims;
        if tau <= 0.0 {
            return z.to_vec();
        }
        match self {
            Prior::None => z.to_vec(),
            Prior::Tikhonov => {
                // (I + tau grad^T grad) x = z
                let n = z.len();
                let mut x = z.to_vec();
                let (mut gx, mut gy, mut d) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                let rep = conjugate_gradient(
                    |v, out| {
                        tv::gradient(v, h, w, 3, &mut gx, &mut gy);
                        tv::divergence(&gx, &gy, h, w, 3, &mut d);
                        for k in 0..n {
                            out[k] = v[k] - tau * d[k];
                        }
                    },
                    z,
                    &mut x,
                    200,
                    1e-10,
                );
                match rep {
                    Ok(_) => x,
                    Err(_) => z.to_vec(),
                }
            }
            Prior::Tv(settings) => tv::tv_prox_warm(z, h, w, 3, tau, settings, &mut ws.tv_dual).0,
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Prior {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Prior::None),
            "tikhonov" => Ok(Prior::Tikhonov),
            "tv" => Ok(Prior::tv()),
            other => Err(Error::Parameter(format!("unknown prior '{other}' (expected none, tikhonov or tv)"))),
        }
    }
}

/// Warm-start state for repeated prox calls inside one solve.
#[derive(Debug, Clone, Default)]
pub struct ProxWorkspace {
    tv_dual: TvDual,
}

/// Inexact prox guarded against increasing the prox objective relative to
/// `incumbent`. Returns the accepted point and its prior value.
pub(crate) fn safeguarded_prox(
    prior: &Prior,
    w: &[f64],
    dims: (usize, usize),
    tau: f64,
    incumbent: &[f64],
    ws: &mut ProxWorkspace,
) -> (Vec<f64>, f64) {
    let cand = prior.prox_with(w, dims, tau, ws);
    let rc = prior.value(&cand, dims);
    if matches!(prior, Prior::None) || tau <= 0.0 {
        return (cand, rc);
    }
    let fit = |v: &[f64]| 0.5 * v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let ri = prior.value(incumbent, dims);
    if fit(&cand) + tau * rc <= fit(incumbent) + tau * ri {
        (cand, rc)
    } else {
        (incumbent.to_vec(), ri)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn zero_tau_is_identity_for_every_prior() {
        let z = random(6 * 5 * 3, 1);
        for p in [Prior::None, Prior::Tikhonov, Prior::tv()] {
            assert_eq!(p.prox(&z, (6, 5), 0.0), z);
        }
    }

    #[test]
    fn prox_is_non_expansive() {
        let dims = (12, 10);
        let n = 12 * 10 * 3;
        for (k, p) in [Prior::Tikhonov, Prior::Tv(TvSettings { inner_iters: 500, tol: 1e-9 })].iter().enumerate() {
            let a = random(n, 10 + k as u64);
            let b = random(n, 20 + k as u64);
            let (pa, pb) = (p.prox(&a, dims, 0.3), p.prox(&b, dims, 0.3));
            let din: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let dout: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!(dout <= din * (1.0 + 1e-6), "{p}: {dout} > {din}");
        }
    }

    #[test]
    fn tikhonov_prox_satisfies_its_normal_equation() {
        let (h, w) = (7, 9);
        let z = random(h * w * 3, 3);
        let tau = 0.8;
        let x = Prior::Tikhonov.prox(&z, (h, w), tau);
        let n = z.len();
        let (mut gx, mut gy, mut d) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        tv::gradient(&x, h, w, 3, &mut gx, &mut gy);
        tv::divergence(&gx, &gy, h, w, 3, &mut d);
        for k in 0..n {
            assert!((x[k] - tau * d[k] - z[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn safeguard_keeps_a_better_incumbent() {
        let dims = (8, 8);
        let w = random(8 * 8 * 3, 4);
        let exact = Prior::Tv(TvSettings { inner_iters: 3000, tol: 1e-12 }).prox(&w, dims, 0.2);
        let crude = Prior::Tv(TvSettings { inner_iters: 1, tol: 0.0 });
        let (out, _) = safeguarded_prox(&crude, &w, dims, 0.2, &exact, &mut ProxWorkspace::default());
        assert_eq!(out, exact);
    }

    #[test]
    fn parses_names() {
        assert_eq!("TV".parse::<Prior>().unwrap(), Prior::tv());
        assert_eq!("none".parse::<Prior>().unwrap(), Prior::None);
        assert!("l1".parse::<Prior>().is_err());
    }
}
