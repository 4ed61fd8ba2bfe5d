//! Register, solve and score one burst with a [`RunConfig`].

use serde::Serialize;

use crate::camera::NoiseParams;
use crate::ensemble::{augment_motions, default_descriptors, subset_ensemble, tta_solve};
use crate::error::{Error, Result};
use crate::eval::{aligned_score, score, MetricReport};
use crate::forward::ObservationModel;
use crate::image::{single_frame_baseline, Burst, RgbImage};
use crate::motion::MotionParams;
use crate::registration::{align_burst, Alignment};
use crate::solver::{
    estimate_noise_variance, hqs_solve_problem, lambda_for_noise, matched_pgd_lambda, noise_variance, pgd_data_weight, pgd_solve_problem,
    Diagnostics, HqsConfig, PgdConfig, Problem,
};

use super::config::{Lambda, Method, RunConfig};
use super::io::BurstMeta;

/// Reconstruction model for a burst described by `meta`.
pub fn observation_model(burst: &Burst, meta: &BurstMeta, cfg: &RunConfig) -> Result<ObservationModel> {
    let kernel = cfg.model_kernel.unwrap_or(meta.kernel);
    ObservationModel::new(kernel.build(meta.sr_factor), meta.sr_factor, burst.cfa(), burst.dims())
}

/// LR alignments and the matching HR motions.
pub fn register(burst: &Burst, sr_factor: usize, cfg: &RunConfig) -> Result<(Vec<Alignment>, Vec<MotionParams>)> {
    let align = align_burst(burst, cfg.motion_model, &cfg.lk)?;
    let hr = align.iter().map(|a| a.motion.scaled(sr_factor as f64)).collect();
    Ok((align, hr))
}

fn mean_signal(burst: &Burst) -> f64 {
    burst.frames().iter().map(|f| f.grid().mean()).sum::<f64>() / burst.len() as f64
}

/// Per-sample noise variance: from the known noise parameters, or estimated
/// from the reference frame when none are recorded.
pub fn noise_var(burst: &Burst, noise: &NoiseParams) -> f64 {
    if noise.is_zero() {
        estimate_noise_variance(burst)
    } else {
        noise_variance(mean_signal(burst), noise)
    }
}

/// HQS-scale regularization weight for this burst.
pub fn resolve_lambda(burst: &Burst, noise: &NoiseParams, cfg: &RunConfig) -> f64 {
    match cfg.lambda {
        Lambda::Fixed(l) => l,
        // Known-clean bursts get the floor rather than an estimate of texture.
        Lambda::Auto if noise.is_zero() => lambda_for_noise(0.0),
        Lambda::Auto => lambda_for_noise(noise_var(burst, noise)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveInfo {
    pub method: Method,
    pub prior: String,
    /// Weight on the unweighted data-term scale.
    pub lambda: f64,
    /// Weight actually passed to PGD.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pgd_lambda: Option<f64>,
    pub ensemble_members: usize,
    pub motions: Vec<MotionParams>,
    pub diagnostics: Vec<Diagnostics>,
}

struct Member {
    x: RgbImage,
    motions: Vec<MotionParams>,
    diagnostics: Diagnostics,
    pgd_lambda: Option<f64>,
}

fn solve_once(
    burst: &Burst,
    motions: &[MotionParams],
    model: &ObservationModel,
    noise: &NoiseParams,
    lambda: f64,
    cfg: &RunConfig,
) -> Result<Member> {
    let problem = Problem::from_burst(burst, motions, model)?;
    let prior = cfg.prior();
    let (est, pgd_lambda) = match cfg.method {
        Method::Hqs => (hqs_solve_problem(problem, &prior, &HqsConfig { lambda, ..cfg.hqs.clone() })?, None),
        Method::Pgd => {
            let var = noise_var(burst, noise);
            let pcfg = PgdConfig { noise: None, ..cfg.pgd.clone() };
            let weight = pgd_data_weight(&problem, &pcfg, Some(var));
            let pl = matched_pgd_lambda(lambda, weight);
            (pgd_solve_problem(problem, &prior, &PgdConfig { lambda: pl, ..pcfg }, Some(var))?, Some(pl))
        }
    };
    Ok(Member { x: est.x, motions: est.motions, diagnostics: est.diagnostics, pgd_lambda })
}

/// Solves with the configured method, optionally as a TTA or subset ensemble.
pub fn reconstruct(
    burst: &Burst,
    motions: &[MotionParams],
    model: &ObservationModel,
    noise: &NoiseParams,
    cfg: &RunConfig,
) -> Result<(RgbImage, SolveInfo)> {
    let lambda = resolve_lambda(burst, noise, cfg);
    let members = std::sync::Mutex::new(Vec::new());
    let x = if cfg.tta {
        let descriptors = default_descriptors(burst.len(), cfg.seed);
        tta_solve(
            |b, d| {
                let m = solve_once(b, &augment_motions(motions, d)?, &transposed_model(model, b)?, noise, lambda, cfg)?;
                let x = m.x.clone();
                let key = descriptors.iter().position(|e| e == d).unwrap_or(0);
                members.lock().unwrap().push((vec![key], m));
                Ok(x)
            },
            burst,
            &descriptors,
        )?
    } else if let Some(size) = cfg.subset_size {
        subset_ensemble(
            |b, idx| {
                let sub: Vec<MotionParams> = idx.iter().map(|&k| motions[k].clone()).collect();
                let m = solve_once(b, &sub, model, noise, lambda, cfg)?;
                let x = m.x.clone();
                members.lock().unwrap().push((idx.to_vec(), m));
                Ok(x)
            },
            burst,
            size,
        )?
    } else {
        let m = solve_once(burst, motions, model, noise, lambda, cfg)?;
        let x = m.x.clone();
        members.lock().unwrap().push((vec![0], m));
        x
    };
    // Members finish in any order; sort so the first is the plain (identity or first-subset) solve.
    let mut members = members.into_inner().unwrap_or_default();
    members.sort_by(|a, b| a.0.cmp(&b.0));
    let ordered: Vec<&Member> = members.iter().map(|(_, m)| m).collect();
    let info = SolveInfo {
        method: cfg.method,
        prior: cfg.prior().to_string(),
        lambda,
        pgd_lambda: ordered.first().and_then(|m| m.pgd_lambda),
        ensemble_members: members.len(),
        motions: ordered.first().map(|m| m.motions.clone()).unwrap_or_default(),
        diagnostics: ordered.iter().map(|m| m.diagnostics.clone()).collect(),
    };
    Ok((x, info))
}

fn transposed_model(model: &ObservationModel, b: &Burst) -> Result<ObservationModel> {
    if b.dims() == model.lr_dims() {
        Ok(model.clone())
    } else {
        ObservationModel::new(model.kernel.clone(), model.sr_factor, b.cfa(), b.dims())
    }
}

/// Bilinear demosaic and upsample of the reference frame.
pub fn baseline(burst: &Burst, sr_factor: usize) -> RgbImage {
    single_frame_baseline(burst.reference(), sr_factor)
}

pub fn evaluate(pred: &RgbImage, gt: &RgbImage, cfg: &RunConfig) -> Result<MetricReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::dim(format!("prediction is {:?} but ground truth is {:?}", pred.dims(), gt.dims())));
    }
    if cfg.aligned {
        aligned_score(pred, gt, &cfg.align())
    } else {
        score(pred, gt, cfg.peak, &cfg.ssim)
    }
}
