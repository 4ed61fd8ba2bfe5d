//! Joint HR-image and motion estimation.
//!
//! Two solvers share one [`Problem`] (stacked operator plus observations):
//! half-quadratic splitting with CG z-steps, prox x-steps and optional
//! Gauss-Newton motion refinement, and proximal gradient descent on the
//! noise-weighted data term.

mod cg;
mod prior;
mod tv;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cg::{conjugate_gradient, CgReport};
pub use prior::{Prior, ProxWorkspace};
pub use tv::{tv_prox, tv_prox_warm, tv_value, TvDual, TvReport, TvSettings};

use crate::camera::NoiseParams;
use crate::error::{Error, Result};
use crate::forward::{frame_response, ForwardOperator, ObservationModel};
use crate::image::{single_frame_baseline, upsample_bilinear, Burst, PixelGrid, RgbImage};
use crate::motion::MotionParams;
use prior::safeguarded_prox;

/// Stacked forward operator together with the observations it explains.
#[derive(Debug, Clone)]
pub struct Problem {
    op: ForwardOperator,
    raw: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    motions: Vec<MotionParams>,
    fallback: Vec<f64>,
}

fn masked(raw: &[f64], mask: &[bool]) -> Vec<f64> {
    raw.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect()
}

impl Problem {
    /// RAW burst with HR-scale motions.
    pub fn from_burst(burst: &Burst, motions: &[MotionParams], model: &ObservationModel) -> Result<Self> {
        if motions.len() != burst.len() {
            return Err(Error::dim(format!("{} motions for {} frames", motions.len(), burst.len())));
        }
        let op = ForwardOperator::new(model, motions)?;
        let y = op.observations(burst)?;
        let raw = burst.frames().iter().map(|f| f.grid().data().to_vec()).collect();
        let fallback = single_frame_baseline(burst.reference(), model.sr_factor).into_grid().into_data();
        Ok(Self { op, raw, y, motions: motions.to_vec(), fallback })
    }

    /// Full-colour LR frames under a model without mosaicking.
    pub fn from_frames(frames: &[RgbImage], motions: &[MotionParams], model: &ObservationModel) -> Result<Self> {
        if model.mosaic {
            return Err(Error::param("RGB frames need a model without mosaicking"));
        }
        if frames.is_empty() || motions.len() != frames.len() {
            return Err(Error::dim(format!("{} motions for {} frames", motions.len(), frames.len())));
        }
        if frames.iter().any(|f| f.dims() != model.lr_dims()) {
            return Err(Error::dim("frame size does not match the observation model"));
        }
        let op = ForwardOperator::new(model, motions)?;
        let raw: Vec<Vec<f64>> = frames.iter().map(|f| f.grid().data().to_vec()).collect();
        let y = raw.iter().enumerate().map(|(k, r)| masked(r, op.mask(k))).collect();
        let fallback = upsample_bilinear(frames[0].grid(), model.sr_factor).into_data();
        Ok(Self { op, raw, y, motions: motions.to_vec(), fallback })
    }

    pub fn model(&self) -> &ObservationModel {
        self.op.model()
    }

    pub fn operator(&self) -> &ForwardOperator {
        &self.op
    }

    pub fn motions(&self) -> &[MotionParams] {
        &self.motions
    }

    /// Observations with invalid samples zeroed.
    pub fn observations(&self) -> &[Vec<f64>] {
        &self.y
    }

    pub fn frame_count(&self) -> usize {
        self.op.frame_count()
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        self.model().hr_dims()
    }

    pub fn hr_len(&self) -> usize {
        self.model().hr_len()
    }

    /// Rebuilds frame `k` for a new motion and re-masks its observations.
    pub fn set_motion(&mut self, k: usize, p: &MotionParams) -> Result<()> {
        self.op.set_motion(k, p)?;
        self.y[k] = masked(&self.raw[k], self.op.mask(k));
        self.motions[k] = p.clone();
        Ok(())
    }

    /// `U x - y` over valid samples.
    pub fn residuals(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut r = self.op.zeros_lr();
        self.op.apply(x, &mut r);
        for (rk, yk) in r.iter_mut().zip(&self.y) {
            for (a, b) in rk.iter_mut().zip(yk) {
                *a -= b;
            }
        }
        r
    }

    /// `1/2 sum_k |y_k - U_k x|^2`.
    pub fn data_term(&self, x: &[f64]) -> f64 {
        0.5 * self.residuals(x).iter().flatten().map(|v| v * v).sum::<f64>()
    }

    /// Gradient of [`Problem::data_term`]: `U^T (U x - y)`.
    pub fn data_gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = self.residuals(x);
        let mut g = vec![0.0; x.len()];
        self.op.adjoint(&r, &mut g);
        g
    }

    /// `out = U^T U v`.
    pub fn normal_apply(&self, v: &[f64], scratch: &mut [Vec<f64>], out: &mut [f64]) {
        self.op.apply(v, scratch);
        self.op.adjoint(scratch, out);
    }

    /// Coverage-weighted shift-and-add estimate.
    pub fn init_estimate(&self) -> Vec<f64> {
        let mut num = vec![0.0; self.hr_len()];
        self.op.adjoint(&self.y, &mut num);
        let den = self.op.coverage();
        num.iter().zip(&den).zip(&self.fallback).map(|((&n, &d), &f)| if d > 1e-8 { n / d } else { f }).collect()
    }

    fn to_image(&self, x: Vec<f64>) -> Result<RgbImage> {
        let (h, w) = self.hr_dims();
        RgbImage::linear(PixelGrid::new(h, w, 3, x)?)
    }

    /// Mean of all observed samples, valid or not.
    pub fn mean_signal(&self) -> f64 {
        let n: usize = self.raw.iter().map(Vec::len).sum();
        self.raw.iter().flatten().sum::<f64>() / n.max(1) as f64
    }
}

/// Shift-and-add initialization for a RAW burst.
pub fn init_estimate(burst: &Burst, motions: &[MotionParams], model: &ObservationModel) -> Result<RgbImage> {
    let problem = Problem::from_burst(burst, motions, model)?;
    problem.to_image(problem.init_estimate())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HqsConfig {
    pub outer_iters: usize,
    pub mu0: f64,
    pub mu_growth: f64,
    pub lambda: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub motion_refine: bool,
    pub gn_iters: usize,
}

impl Default for HqsConfig {
    fn default() -> Self {
        Self { outer_iters: 6, mu0: 0.01, mu_growth: 4.0, lambda: 2e-3, cg_iters: 50, cg_tol: 1e-6, motion_refine: false, gn_iters: 3 }
    }
}

impl HqsConfig {
    pub fn mu(&self, t: usize) -> f64 {
        self.mu0 * self.mu_growth.powi(t as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0 && self.mu_growth > 1.0 && self.lambda >= 0.0 && self.cg_tol > 0.0) {
            return Err(Error::param("HQS needs mu0 > 0, growth > 1, lambda >= 0 and cg_tol > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    pub iters: usize,
    pub lambda: f64,
    /// Fixed step; `None` uses `1/L` from power iteration.
    pub step: Option<f64>,
    /// Noise level used for the data weight; estimated from the burst when absent.
    pub noise: Option<NoiseParams>,
    pub power_iters: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self { iters: 100, lambda: 0.16, step: None, noise: None, power_iters: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Start,
    Z,
    X,
    P,
}

/// `E_mu(x, z)` after one half-step of outer iteration `iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub iteration: usize,
    pub mu: f64,
    pub stage: Stage,
    pub energy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// HQS energies, one per half-step.
    pub energies: Vec<EnergyRecord>,
    /// One CG report per z-step.
    pub cg: Vec<CgReport>,
    /// Unweighted data term after each outer iteration (HQS) or iteration (PGD).
    pub data_terms: Vec<f64>,
    /// PGD objective `f + lambda R`, starting with the initial estimate.
    pub objective: Vec<f64>,
    pub lipschitz: Option<f64>,
    pub step: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SrEstimate {
    pub x: RgbImage,
    pub motions: Vec<MotionParams>,
    pub diagnostics: Diagnostics,
}

/// Solves `(U^T U + mu I) z = U^T y + mu x` by CG, warm-started from `z`.
pub fn z_step(problem: &Problem, x: &[f64], z: &mut [f64], mu: f64, cfg: &HqsConfig) -> Result<CgReport> {
    if mu <= 0.0 {
        return Err(Error::param("mu must be positive"));
    }
    let mut rhs = vec![0.0; x.len()];
    problem.operator().adjoint(problem.observations(), &mut rhs);
    for (r, xi) in rhs.iter_mut().zip(x) {
        *r += mu * xi;
    }
    let mut scratch = problem.operator().zeros_lr();
    conjugate_gradient(
        |v, out| {
            problem.normal_apply(v, &mut scratch, out);
            for (o, vi) in out.iter_mut().zip(v) {
                *o += mu * vi;
            }
        },
        &rhs,
        z,
        cfg.cg_iters,
        cfg.cg_tol,
    )
}

/// `prior.prox(z, lambda / mu)`.
pub fn x_step(z: &[f64], dims: (usize, usize), mu: f64, lambda: f64, prior: &Prior) -> Vec<f64> {
    prior.prox(z, dims, lambda / mu)
}

/// Outcome of one motion-refinement pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PStepReport {
    pub motions: Vec<MotionParams>,
    /// Frames whose normal matrix was singular; their motions are unchanged.
    pub singular: Vec<usize>,
}

fn frame_cost(x: &PixelGrid, p: &MotionParams, model: &ObservationModel, y: &[f64]) -> Option<f64> {
    let r = frame_response(x, p, model, false);
    let (mut s, mut n) = (0.0, 0usize);
    for ((v, t), &m) in r.values.iter().zip(y).zip(&r.mask) {
        if m {
            s += (v - t) * (v - t);
            n += 1;
        }
    }
    (n > 0).then(|| 0.5 * s / n as f64)
}

/// Gauss-Newton refinement of one frame; `None` when the normal matrix is singular.
fn refine_frame(x: &PixelGrid, p0: &MotionParams, model: &ObservationModel, y: &[f64], iters: usize) -> Option<MotionParams> {
    let mut p = p0.clone();
    let np = p.params.len();
    let mut cost = frame_cost(x, &p, model, y)?;
    for _ in 0..iters {
        let r = frame_response(x, &p, model, true);
        let mut h = DMatrix::<f64>::zeros(np, np);
        let mut g = DVector::<f64>::zeros(np);
        let mut n = 0usize;
        for q in 0..y.len() {
            if !r.mask[q] {
                continue;
            }
            n += 1;
            let res = r.values[q] - y[q];
            for a in 0..np {
                let ja = r.jacobian[a][q];
                g[a] += ja * res;
                for b in a..np {
                    h[(a, b)] += ja * r.jacobian[b][q];
                }
            }
        }
        for a in 0..np {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let eig = h.clone().symmetric_eigen();
        let (lmin, lmax) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if n == 0 || !(lmax > 1e-12) || lmin <= lmax * 1e-12 {
            return None;
        }
        let delta = h.cholesky()?.solve(&(-g));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..6 {
            let cand = MotionParams { model: p.model, params: p.params.iter().zip(delta.iter()).map(|(a, d)| a + t * d).collect() };
            if let Some(c) = frame_cost(x, &cand, model, y) {
                if c < cost {
                    cost = c;
                    p = cand;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some(p)
}

/// Gauss-Newton motion refinement against the current estimate; frame 0 stays fixed.
pub fn p_step(problem: &Problem, x: &[f64], gn_iters: usize) -> Result<PStepReport> {
    let (h, w) = problem.hr_dims();
    let grid = PixelGrid::new(h, w, 3, x.to_vec())?;
    let model = problem.model();
    let refined: Vec<Option<MotionParams>> = (1..problem.frame_count())
        .into_par_iter()
        .map(|k| refine_frame(&grid, &problem.motions[k], model, &problem.raw[k], gn_iters))
        .collect();
    let mut motions = vec![problem.motions[0].clone()];
    let mut singular = Vec::new();
    for (k, r) in refined.into_iter().enumerate() {
        match r {
            Some(p) => motions.push(p),
            None => {
                singular.push(k + 1);
                motions.push(problem.motions[k + 1].clone());
            }
        }
    }
    Ok(PStepReport { motions, singular })
}

fn check_finite(v: &[f64], iteration: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { iteration, detail: format!("non-finite {what}") })
    }
}

fn hqs_energy(problem: &Problem, prior: &Prior, x: &[f64], z: &[f64], mu: f64, lambda: f64) -> f64 {
    let gap: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    problem.data_term(z) + 0.5 * mu * gap + lambda * prior.value(x, problem.hr_dims())
}

/// Half-quadratic splitting on an already assembled problem.
pub fn hqs_solve_problem(mut problem: Problem, prior: &Prior, cfg: &HqsConfig) -> Result<SrEstimate> {
    cfg.validate()?;
    let dims = problem.hr_dims();
    let mut x = problem.init_estimate();
    let mut z = x.clone();
    let mut diag = Diagnostics::default();
    let mut ws = ProxWorkspace::default();
    for t in 0..cfg.outer_iters {
        let mu = cfg.mu(t);
        let record = |diag: &mut Diagnostics, stage, e| {
            diag.energies.push(EnergyRecord { iteration: t, mu, stage, energy: e });
        };
        record(&mut diag, Stage::Start, hqs_energy(&problem, prior, &x, &z, mu, cfg.lambda));

        let rep = z_step(&problem, &x, &mut z, mu, cfg).map_err(|e| match e {
            Error::Numerical { detail, .. } => Error::Numerical { iteration: t, detail },
            other => other,
        })?;
        diag.cg.push(rep);
        check_finite(&z, t, "z")?;
        record(&mut diag, Stage::Z, hqs_energy(&problem, prior, &x, &z, mu, cfg.lambda));

        x = safeguarded_prox(prior, &z, dims, cfg.lambda / mu, &x, &mut ws).0;
        check_finite(&x, t, "x")?;
        record(&mut diag, Stage::X, hqs_energy(&problem, prior, &x, &z, mu, cfg.lambda));
        diag.data_terms.push(problem.data_term(&x));

        if cfg.motion_refine && problem.frame_count() > 1 {
            let rep = p_step(&problem, &x, cfg.gn_iters)?;
            for k in &rep.singular {
                diag.flags.push(format!("iteration {t}: frame {k} singular in motion refinement"));
            }
            for (k, p) in rep.motions.iter().enumerate() {
                if *p != problem.motions[k] {
                    problem.set_motion(k, p)?;
                }
            }
            record(&mut diag, Stage::P, hqs_energy(&problem, prior, &x, &z, mu, cfg.lambda));
        }
    }
    let motions = problem.motions.clone();
    Ok(SrEstimate { x: problem.to_image(x)?, motions, diagnostics: diag })
}

/// Half-quadratic splitting on a RAW burst with HR-scale initial motions.
pub fn hqs_solve(
    burst: &Burst,
    init_motions: &[MotionParams],
    model: &ObservationModel,
    prior: &Prior,
    cfg: &HqsConfig,
) -> Result<SrEstimate> {
    hqs_solve_problem(Problem::from_burst(burst, init_motions, model)?, prior, cfg)
}

/// HQS regularization weight for a given per-sample noise variance: twice the
/// variance, floored so noise-free problems keep a little smoothing.
pub fn lambda_for_noise(variance: f64) -> f64 {
    (2.0 * variance).max(2e-5)
}

/// PGD weight equivalent to an HQS weight: PGD scales the data term by
/// `1 / (sigma^2 B)`, so the same minimizer needs `lambda * weight`.
pub fn matched_pgd_lambda(hqs_lambda: f64, weight: f64) -> f64 {
    hqs_lambda * weight
}

/// `sigma_s * mean(y) + sigma_r^2`.
pub fn noise_variance(mean_signal: f64, noise: &NoiseParams) -> f64 {
    noise.shot_slope * mean_signal.max(0.0) + noise.read_var
}

/// Robust noise variance of a RAW frame from differences of same-colour
/// horizontal neighbours (median absolute deviation).
pub fn estimate_noise_variance(burst: &Burst) -> f64 {
    let g = burst.reference().grid();
    let (h, w) = g.dims();
    let mut d: Vec<f64> = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w.saturating_sub(2) {
            d.push((g.get(i, j + 2, 0) - g.get(i, j, 0)).abs());
        }
    }
    if d.is_empty() {
        return 1e-6;
    }
    let mid = d.len() / 2;
    let med = *d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1;
    let sigma = med / 0.6745 / std::f64::consts::SQRT_2;
    (sigma * sigma).max(1e-6)
}

/// Largest eigenvalue of `U^T U` by power iteration from a fixed start.
pub fn power_iteration(problem: &Problem, iters: usize) -> f64 {
    let n = problem.hr_len();
    let mut v: Vec<f64> = (0..n).map(|k| 1.0 + 0.1 * ((k % 7) as f64)).collect();
    let mut scratch = problem.operator().zeros_lr();
    let mut av = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        problem.normal_apply(&v, &mut scratch, &mut av);
        lambda = v.iter().zip(&av).map(|(a, b)| a * b).sum();
        std::mem::swap(&mut v, &mut av);
    }
    lambda
}

/// Data weight `1 / (sigma^2 B)` PGD applies to the stacked residual.
pub fn pgd_data_weight(problem: &Problem, cfg: &PgdConfig, estimated: Option<f64>) -> f64 {
    let var = match (&cfg.noise, estimated) {
        (Some(n), _) => noise_variance(problem.mean_signal(), n),
        (None, Some(v)) => v,
        (None, None) => 1.0,
    };
    1.0 / (var.max(1e-12) * problem.frame_count() as f64)
}

/// Proximal gradient descent on an assembled problem; `noise_var` is used when
/// the config carries no noise parameters.
pub fn pgd_solve_problem(problem: Problem, prior: &Prior, cfg: &PgdConfig, noise_var: Option<f64>) -> Result<SrEstimate> {
    if cfg.lambda < 0.0 {
        return Err(Error::param("lambda must be non-negative"));
    }
    let dims = problem.hr_dims();
    let weight = pgd_data_weight(&problem, cfg, noise_var);
    // Slight inflation keeps the step below 1/L despite power-iteration underestimation.
    let lip = 1.02 * weight * power_iteration(&problem, cfg.power_iters);
    let alpha = match cfg.step {
        Some(a) if a > 0.0 => a,
        Some(_) => return Err(Error::param("step must be positive")),
        None if lip > 0.0 => 1.0 / lip,
        None => return Err(Error::Numerical { iteration: 0, detail: "operator has zero norm".into() }),
    };
    let mut diag = Diagnostics { lipschitz: Some(lip), step: Some(alpha), ..Default::default() };
    let mut x = problem.init_estimate();
    let mut r = problem.residuals(&x);
    let half_sq = |r: &[Vec<f64>]| 0.5 * r.iter().flatten().map(|v| v * v).sum::<f64>();
    diag.objective.push(weight * half_sq(&r) + cfg.lambda * prior.value(&x, dims));
    let mut ws = ProxWorkspace::default();
    let mut g = vec![0.0; x.len()];
    for j in 0..cfg.iters {
        problem.op.adjoint(&r, &mut g);
        check_finite(&g, j, "gradient")?;
        let v: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - alpha * weight * b).collect();
        let (next, reg) = safeguarded_prox(prior, &v, dims, alpha * cfg.lambda, &x, &mut ws);
        x = next;
        check_finite(&x, j, "iterate")?;
        r = problem.residuals(&x);
        let data = half_sq(&r);
        diag.data_terms.push(data);
        diag.objective.push(weight * data + cfg.lambda * reg);
    }
    let motions = problem.motions.clone();
    Ok(SrEstimate { x: problem.to_image(x)?, motions, diagnostics: diag })
}

/// Proximal gradient descent on a RAW burst with HR-scale motions.
pub fn pgd_solve(burst: &Burst, motions: &[MotionParams], model: &ObservationModel, prior: &Prior, cfg: &PgdConfig) -> Result<SrEstimate> {
    let est = cfg.noise.is_none().then(|| estimate_noise_variance(burst));
    pgd_solve_problem(Problem::from_burst(burst, motions, model)?, prior, cfg, est)
}

#[cfg(test)]
mod tests;
