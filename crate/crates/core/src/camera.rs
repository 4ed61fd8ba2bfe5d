//! Simplified invertible camera pipeline, sensor noise and synthetic bursts.
//!
//! `unprocess` maps sRGB to linear sensor space through inverse gamma,
//! inverse colour matrix and inverse white balance; `process` is its exact
//! inverse on in-gamut values. Bursts are generated in linear space: each
//! frame is the HR image warped by a random Euclidean motion, blurred and
//! decimated by the shared observation-model code, mosaicked, and corrupted
//! by heteroscedastic Gaussian noise with variance `shot * x + read`.

use nalgebra::Matrix3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{blur, decimate_mosaic, warp, Direction, KernelKind, ObservationModel};
use crate::image::{Burst, CfaPattern, ColorSpace, PixelGrid, RawBayerImage, RgbImage};
use crate::motion::MotionParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ColorPipelineParams {
    pub wb_gains: [f64; 3],
    /// Camera RGB to output RGB.
    pub ccm: [[f64; 3]; 3],
    pub gamma: f64,
}

impl Default for ColorPipelineParams {
    fn default() -> Self {
        Self { wb_gains: [2.0, 1.0, 1.6], ccm: [[1.6, -0.4, -0.2], [-0.2, 1.5, -0.3], [0.0, -0.5, 1.5]], gamma: 2.2 }
    }
}

impl ColorPipelineParams {
    pub fn identity() -> Self {
        Self { wb_gains: [1.0; 3], ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], gamma: 1.0 }
    }

    fn ccm_matrix(&self) -> Matrix3<f64> {
        let c = &self.ccm;
        Matrix3::new(c[0][0], c[0][1], c[0][2], c[1][0], c[1][1], c[1][2], c[2][0], c[2][1], c[2][2])
    }

    fn validate(&self) -> Result<()> {
        if self.wb_gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::param("white-balance gains must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma must be positive"));
        }
        if self.ccm_matrix().determinant().abs() <= 1e-8 {
            return Err(Error::param("colour matrix is singular"));
        }
        Ok(())
    }
}

/// sRGB -> linear sensor space.
pub fn unprocess(srgb: &RgbImage, params: &ColorPipelineParams) -> Result<RgbImage> {
    if srgb.space() != ColorSpace::Srgb {
        return Err(Error::param("unprocess expects an sRGB image"));
    }
    params.validate()?;
    let inv = params.ccm_matrix().try_inverse().ok_or_else(|| Error::param("colour matrix is singular"))?;
    let (h, w) = srgb.dims();
    let mut out = PixelGrid::zeros(h, w, 3);
    for i in 0..h {
        for j in 0..w {
            let v = nalgebra::Vector3::from_fn(|c, _| srgb.get(i, j, c).max(0.0).powf(params.gamma));
            let cam = inv * v;
            for c in 0..3 {
                out.set(i, j, c, cam[c] / params.wb_gains[c]);
            }
        }
    }
    RgbImage::new(out, ColorSpace::LinearSensor)
}

/// Linear sensor space -> sRGB, clamped to `[0, 1]`.
pub fn process(linear: &RgbImage, params: &ColorPipelineParams) -> Result<RgbImage> {
    if linear.space() != ColorSpace::LinearSensor {
        return Err(Error::param("process expects a linear-sensor image"));
    }
    params.validate()?;
    let ccm = params.ccm_matrix();
    let (h, w) = linear.dims();
    let mut out = PixelGrid::zeros(h, w, 3);
    for i in 0..h {
        for j in 0..w {
            let v = nalgebra::Vector3::from_fn(|c, _| linear.get(i, j, c) * params.wb_gains[c]);
            let rgb = ccm * v;
            for c in 0..3 {
                let clamped = rgb[c].clamp(0.0, 1.0);
                out.set(i, j, c, clamped.powf(1.0 / params.gamma).clamp(0.0, 1.0));
            }
        }
    }
    RgbImage::new(out, ColorSpace::Srgb)
}

/// Heteroscedastic Gaussian noise: `Var(y | x) = shot_slope * x + read_var`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub shot_slope: f64,
    pub read_var: f64,
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams { shot_slope: 0.0, read_var: 0.0 };

    pub fn new(shot_slope: f64, read_var: f64) -> Result<Self> {
        if !(shot_slope >= 0.0 && read_var >= 0.0) || !shot_slope.is_finite() || !read_var.is_finite() {
            return Err(Error::param("noise parameters must be finite and non-negative"));
        }
        Ok(Self { shot_slope, read_var })
    }

    /// Typical noise level of the synthetic benchmark bursts.
    pub fn challenge() -> Self {
        Self { shot_slope: 0.01, read_var: 1e-4 }
    }

    pub fn is_zero(&self) -> bool {
        self.shot_slope == 0.0 && self.read_var == 0.0
    }

    pub fn variance_at(&self, x: f64) -> f64 {
        self.shot_slope * x.max(0.0) + self.read_var
    }
}

/// Adds independent per-pixel noise; deterministic for a fixed seed.
pub fn add_noise(raw: &RawBayerImage, noise: &NoiseParams, seed: u64) -> RawBayerImage {
    if noise.is_zero() {
        return raw.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = raw.clone();
    for v in out.grid_mut().data_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += n * noise.variance_at(*v).sqrt();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    pub sr_factor: usize,
    /// LR frame size; the ground truth is `sr_factor` times larger.
    pub lr_dims: (usize, usize),
    /// Maximum translation in HR pixels.
    pub max_translation: f64,
    /// Maximum rotation in degrees.
    pub max_rotation: f64,
    pub noise: NoiseParams,
    pub cfa: CfaPattern,
    /// Anti-aliasing kernel applied before decimation.
    pub kernel: KernelKind,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 14,
            sr_factor: 4,
            lr_dims: (96, 96),
            max_translation: 24.0,
            max_rotation: 1.0,
            noise: NoiseParams::challenge(),
            cfa: CfaPattern::Rggb,
            kernel: KernelKind::Bilinear,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn observation_model(&self) -> Result<ObservationModel> {
        ObservationModel::new(self.kernel.build(self.sr_factor), self.sr_factor, self.cfa, self.lr_dims)
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        (self.lr_dims.0 * self.sr_factor, self.lr_dims.1 * self.sr_factor)
    }

    /// HR margin needed around the ground-truth crop on each side.
    pub fn required_margin(&self) -> usize {
        let (h, w) = self.hr_dims();
        let half_diag = 0.5 * ((h * h + w * w) as f64).sqrt();
        let rot = self.max_rotation.abs().to_radians() * half_diag;
        let radius = self.kernel.build(self.sr_factor).radius() as f64;
        (self.max_translation.abs() + rot + radius + 2.0).ceil() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::param("a burst needs at least one frame"));
        }
        if self.sr_factor == 0 {
            return Err(Error::param("sr_factor must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBurstSample {
    pub burst: Burst,
    pub gt_linear: RgbImage,
    /// True HR motions in ground-truth coordinates; entry 0 is the identity.
    pub gt_motions: Vec<MotionParams>,
    pub noise: NoiseParams,
}

/// Random Euclidean motions: identity for the reference, uniform translation
/// and rotation about the HR crop centre otherwise.
pub fn sample_motions(cfg: &SynthConfig) -> Vec<MotionParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = cfg.hr_dims();
    let pivot = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut motions = vec![MotionParams::euclidean(0.0, 0.0, 0.0)];
    for _ in 1..cfg.frames {
        let t = cfg.max_translation.abs();
        let r = cfg.max_rotation.abs();
        let tx = if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
        let ty = if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
        let th = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        motions.push(MotionParams::euclidean_about(pivot, (tx, ty), th.to_radians()));
    }
    motions
}

fn frame_seed(seed: u64, k: usize) -> u64 {
    // splitmix64 step so per-frame streams are decorrelated
    let mut z = seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates a burst with random motions.
pub fn synthesize_burst(hr_srgb: &RgbImage, pipeline: &ColorPipelineParams, cfg: &SynthConfig) -> Result<SyntheticBurstSample> {
    cfg.validate()?;
    let motions = sample_motions(cfg);
    synthesize_with_motions(hr_srgb, pipeline, cfg, &motions)
}

/// Generates a burst from caller-supplied HR motions (ground-truth coordinates).
pub fn synthesize_with_motions(
    hr_srgb: &RgbImage,
    pipeline: &ColorPipelineParams,
    cfg: &SynthConfig,
    motions: &[MotionParams],
) -> Result<SyntheticBurstSample> {
    cfg.validate()?;
    if motions.len() != cfg.frames {
        return Err(Error::dim(format!("{} motions for {} frames", motions.len(), cfg.frames)));
    }
    let linear = unprocess(hr_srgb, pipeline)?;
    synthesize_linear(&linear, cfg, motions)
}

/// Burst synthesis from an image already in linear sensor space.
pub fn synthesize_linear(linear: &RgbImage, cfg: &SynthConfig, motions: &[MotionParams]) -> Result<SyntheticBurstSample> {
    cfg.validate()?;
    let (gh, gw) = cfg.hr_dims();
    let (sh, sw) = linear.dims();
    let margin = cfg.required_margin();
    if sh < gh + 2 * margin || sw < gw + 2 * margin {
        return Err(Error::dim(format!(
            "source {sh}x{sw} too small: a {gh}x{gw} crop needs a {margin}px margin, i.e. at least {}x{}",
            gh + 2 * margin,
            gw + 2 * margin
        )));
    }
    let (top, left) = ((sh - gh) / 2, (sw - gw) / 2);
    let gt = RgbImage::linear(linear.grid().crop(top, left, gh, gw)?)?;

    // Work on the source region just large enough for the margin.
    let (rt, rl) = (top - margin, left - margin);
    let region = linear.grid().crop(rt, rl, gh + 2 * margin, gw + 2 * margin)?;
    let offset = (margin as f64, margin as f64);

    let model = cfg.observation_model()?;
    let mut frames = Vec::with_capacity(cfg.frames);
    for (k, p) in motions.iter().enumerate() {
        let warped = warp(&region, &p.conjugated(offset), Direction::Apply);
        let blurred = blur(&warped, &model.kernel, Direction::Apply);
        let cropped = RgbImage::linear(blurred.crop(margin, margin, gh, gw)?)?;
        let clean = decimate_mosaic(&cropped, &model)?;
        frames.push(add_noise(&clean, &cfg.noise, frame_seed(cfg.seed, k)));
    }
    Ok(SyntheticBurstSample { burst: Burst::new(frames)?, gt_linear: gt, gt_motions: motions.to_vec(), noise: cfg.noise })
}
