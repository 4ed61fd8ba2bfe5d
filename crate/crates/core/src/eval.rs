//! Linear-space PSNR/SSIM and alignment-based scoring.
//!
//! The aligned protocol warps the prediction onto the ground truth with
//! block-wise LK flow, fits a global 3x3 colour map on the valid pixels and
//! scores only those pixels.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, PixelGrid, RgbImage};
use crate::registration::{block_flow, warp_by_flow, FlowConfig};

/// PSNR reported for (near-)perfect predictions.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub valid_fraction: f64,
    pub flags: Vec<String>,
}

fn check_pair(pred: &RgbImage, gt: &RgbImage) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::dim(format!("prediction {:?} and ground truth {:?} differ", pred.dims(), gt.dims())));
    }
    if pred.space() != ColorSpace::LinearSensor || gt.space() != ColorSpace::LinearSensor {
        return Err(Error::param("metrics are defined on linear-sensor images"));
    }
    Ok(())
}

/// PSNR over the pixels where `mask` is set (all pixels when `None`).
pub fn psnr(pred: &RgbImage, gt: &RgbImage, peak: f64, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(pred, gt)?;
    if !(peak > 0.0) {
        return Err(Error::param("peak must be positive"));
    }
    let (p, g) = (pred.grid().data(), gt.grid().data());
    let (mut sse, mut n) = (0.0, 0usize);
    for px in 0..p.len() / 3 {
        if mask.is_some_and(|m| !m[px]) {
            continue;
        }
        for c in 0..3 {
            let d = p[3 * px + c] - g[3 * px + c];
            sse += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = sse / n as f64;
    if mse < peak * peak * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

fn gaussian_window(cfg: &SsimConfig) -> Vec<f64> {
    let r = (cfg.window / 2) as f64;
    let w: Vec<f64> = (0..cfg.window).map(|k| (-((k as f64 - r).powi(2)) / (2.0 * cfg.sigma * cfg.sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a single-channel buffer.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|a| k[a] * x[i * w + j + a]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|a| k[a] * rows[(i + a) * ow + j]).sum();
        }
    }
    out
}

/// Local SSIM map of one channel over fully-inside windows.
fn ssim_map(a: &[f64], b: &[f64], h: usize, w: usize, cfg: &SsimConfig) -> Vec<f64> {
    let k = gaussian_window(cfg);
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect()
}

fn ssim_masked(pred: &PixelGrid, gt: &PixelGrid, cfg: &SsimConfig, mask: Option<&[bool]>) -> Result<f64> {
    let (h, w) = pred.dims();
    if h < cfg.window || w < cfg.window {
        return Err(Error::dim(format!("{h}x{w} image is smaller than the {0}x{0} SSIM window", cfg.window)));
    }
    let n = cfg.window;
    // Windows count only when every pixel they cover is valid.
    let keep: Option<Vec<bool>> = mask.map(|m| {
        let ones: Vec<f64> = m.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        filter_valid(&ones, h, w, &vec![1.0; n]).iter().map(|&c| c > n as f64 * n as f64 - 0.5).collect()
    });
    let (mut total, mut count) = (0.0, 0usize);
    for c in 0..pred.channels() {
        let map = ssim_map(pred.channel(c).data(), gt.channel(c).data(), h, w, cfg);
        for (i, v) in map.iter().enumerate() {
            if keep.as_ref().is_none_or(|k| k[i]) {
                total += v;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / count as f64)
}

/// Mean SSIM over channels with a Gaussian window.
pub fn ssim(pred: &RgbImage, gt: &RgbImage, cfg: &SsimConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    ssim_masked(pred.grid(), gt.grid(), cfg, None)
}

/// Linear colour correction `out = M * rgb`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorMap3x3 {
    pub m: [[f64; 3]; 3],
}

impl ColorMap3x3 {
    pub const IDENTITY: ColorMap3x3 = ColorMap3x3 { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] };

    pub fn apply(&self, img: &RgbImage) -> RgbImage {
        let (h, w) = img.dims();
        let src = img.grid().data();
        let mut out = src.to_vec();
        for px in 0..h * w {
            for r in 0..3 {
                out[3 * px + r] = (0..3).map(|c| self.m[r][c] * src[3 * px + c]).sum();
            }
        }
        RgbImage::new(PixelGrid::new(h, w, 3, out).expect("same shape"), img.space()).expect("rgb")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorFit {
    pub map: ColorMap3x3,
    /// The masked colour samples did not span three dimensions; `map` is the identity.
    pub rank_deficient: bool,
}

/// Least-squares `M` minimizing `sum |M pred_i - gt_i|^2` over masked pixels.
pub fn fit_color_map(pred: &RgbImage, gt: &RgbImage, mask: Option<&[bool]>) -> Result<ColorFit> {
    if pred.dims() != gt.dims() {
        return Err(Error::dim("colour fit needs images of equal size"));
    }
    let (p, g) = (pred.grid().data(), gt.grid().data());
    let mut a = Matrix3::<f64>::zeros();
    let mut b = Matrix3::<f64>::zeros();
    for px in 0..p.len() / 3 {
        if mask.is_some_and(|m| !m[px]) {
            continue;
        }
        for r in 0..3 {
            for c in 0..3 {
                a[(r, c)] += p[3 * px + r] * p[3 * px + c];
                b[(r, c)] += p[3 * px + r] * g[3 * px + c];
            }
        }
    }
    let eig = a.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let deficient = ColorFit { map: ColorMap3x3::IDENTITY, rank_deficient: true };
    if !(hi > 0.0) || lo <= hi * 1e-12 {
        return Ok(deficient);
    }
    let Some(sol) = a.cholesky().map(|c| c.solve(&b)) else {
        return Ok(deficient);
    };
    // sol = A^-1 B holds M^T.
    let mut m = [[0.0; 3]; 3];
    for (r, row) in m.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = sol[(c, r)];
        }
    }
    Ok(ColorFit { map: ColorMap3x3 { m }, rank_deficient: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub flow: FlowConfig,
    pub peak: f64,
    pub ssim: SsimConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { flow: FlowConfig::default(), peak: 1.0, ssim: SsimConfig::default() }
    }
}

fn gray(img: &RgbImage) -> PixelGrid {
    let (h, w) = img.dims();
    PixelGrid::from_fn(h, w, 1, |i, j, _| (img.get(i, j, 0) + img.get(i, j, 1) + img.get(i, j, 2)) / 3.0)
}

/// Plain PSNR/SSIM over the whole image.
pub fn score(pred: &RgbImage, gt: &RgbImage, peak: f64, cfg: &SsimConfig) -> Result<MetricReport> {
    Ok(MetricReport { psnr_db: psnr(pred, gt, peak, None)?, ssim: ssim(pred, gt, cfg)?, valid_fraction: 1.0, flags: vec![] })
}

/// Scores `pred` after flow alignment and colour correction against `gt`.
///
/// Flow is estimated on a globally colour-corrected copy of `pred`; the final
/// colour map is refitted on the warped prediction's valid pixels.
pub fn aligned_score(pred: &RgbImage, gt: &RgbImage, cfg: &AlignConfig) -> Result<MetricReport> {
    check_pair(pred, gt)?;
    // A global colour pre-fit keeps colour differences from biasing the flow.
    let pre = fit_color_map(pred, gt, None)?;
    let guide = if pre.rank_deficient { pred.clone() } else { pre.map.apply(pred) };
    let flow = block_flow(&gray(&guide), &gray(gt), &cfg.flow)?;
    let (warped, mask) = warp_by_flow(pred.grid(), &flow)?;
    let warped = RgbImage::linear(warped)?;
    let mut flags = Vec::new();
    let fit = fit_color_map(&warped, gt, Some(&mask))?;
    let corrected = if fit.rank_deficient {
        flags.push("color_fit_rank_deficient".to_string());
        warped
    } else {
        fit.map.apply(&warped)
    };
    let valid = mask.iter().filter(|&&m| m).count();
    let psnr_db = psnr(&corrected, gt, cfg.peak, Some(&mask))?;
    let ssim = ssim_masked(corrected.grid(), gt.grid(), &cfg.ssim, Some(&mask))?;
    Ok(MetricReport { psnr_db, ssim, valid_fraction: valid as f64 / mask.len() as f64, flags })
}
