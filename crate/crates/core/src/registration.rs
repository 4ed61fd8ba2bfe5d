//! Robust multiscale forward-additive Lucas-Kanade registration.
//!
//! `lk_align(reference, moving, ..)` returns `p` such that
//! `reference(T_p(u)) ~ moving(u)`, matching the convention of
//! [`crate::motion`]. Residuals are weighted with a Huber loss and every
//! Gauss-Newton update is step-halved until the robust cost stops increasing.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::bilinear_taps;
use crate::image::{raw_to_gray, reflect101, Burst, PixelGrid};
pub use crate::motion::{MotionModel, MotionParams};

const MAX_HALVINGS: usize = 5;
const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkConfig {
    pub pyramid_levels: usize,
    pub iters_per_level: usize,
    /// Huber threshold in intensity units; `f64::INFINITY` gives plain least squares.
    pub robust_threshold: f64,
    /// Stop a level once the parameter update norm falls below this.
    pub convergence_tol: f64,
}

impl Default for LkConfig {
    fn default() -> Self {
        Self { pyramid_levels: 3, iters_per_level: 30, robust_threshold: 0.05, convergence_tol: 1e-5 }
    }
}

impl LkConfig {
    fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 {
            return Err(Error::param("pyramid_levels must be at least 1"));
        }
        if !(self.robust_threshold > 0.0) {
            return Err(Error::param("robust_threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LkStatus {
    Converged,
    MaxIterations,
    /// Normal matrix was singular or ill-conditioned; the initial motion was kept.
    Degenerate,
}

/// Robust cost when entering and leaving one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCost {
    pub level: usize,
    pub entry: f64,
    pub exit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub motion: MotionParams,
    pub status: LkStatus,
    pub levels: Vec<LevelCost>,
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut t: Vec<f64> = (-r..=r).map(|a| (-(a * a) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Separable blur with reflect-101 borders (single channel).
fn blur_reflect(g: &PixelGrid, taps: &[f64]) -> PixelGrid {
    let (h, w) = g.dims();
    let r = (taps.len() / 2) as isize;
    let tmp = PixelGrid::from_fn(h, w, 1, |i, j, _| {
        taps.iter().enumerate().map(|(t, &k)| k * g.get(i, reflect101(j as isize + t as isize - r, w), 0)).sum()
    });
    PixelGrid::from_fn(h, w, 1, |i, j, _| {
        taps.iter().enumerate().map(|(t, &k)| k * tmp.get(reflect101(i as isize + t as isize - r, h), j, 0)).sum()
    })
}

/// Level 0 is the input; each further level is a sigma-1 Gaussian blur
/// followed by keeping every other pixel.
pub fn build_pyramid(gray: &PixelGrid, levels: usize) -> Result<Vec<PixelGrid>> {
    if levels == 0 {
        return Err(Error::param("pyramid needs at least one level"));
    }
    if gray.channels() != 1 {
        return Err(Error::dim("pyramid input must be single-channel"));
    }
    let (mut h, mut w) = gray.dims();
    for _ in 1..levels {
        h = h.div_ceil(2);
        w = w.div_ceil(2);
    }
    if h < 8 || w < 8 {
        return Err(Error::dim(format!(
            "{}x{} image too small for {levels} levels (coarsest would be {h}x{w})",
            gray.height(),
            gray.width()
        )));
    }
    let taps = gaussian_taps(1.0);
    let mut out = vec![gray.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap();
        let b = blur_reflect(prev, &taps);
        let (ph, pw) = prev.dims();
        out.push(PixelGrid::from_fn(ph.div_ceil(2), pw.div_ceil(2), 1, |i, j, _| b.get(2 * i, 2 * j, 0)));
    }
    Ok(out)
}

/// Largest level count (up to `max`) whose coarsest level stays at least 8x8.
pub fn max_pyramid_levels(h: usize, w: usize, max: usize) -> usize {
    let (mut h, mut w, mut n) = (h, w, 1);
    while n < max && h.div_ceil(2) >= 8 && w.div_ceil(2) >= 8 {
        h = h.div_ceil(2);
        w = w.div_ceil(2);
        n += 1;
    }
    n
}

/// Central-difference gradients; zero on the one-pixel border.
fn gradients(g: &PixelGrid) -> (PixelGrid, PixelGrid) {
    let (h, w) = g.dims();
    let gx =
        PixelGrid::from_fn(h, w, 1, |i, j, _| if j == 0 || j + 1 == w { 0.0 } else { 0.5 * (g.get(i, j + 1, 0) - g.get(i, j - 1, 0)) });
    let gy =
        PixelGrid::from_fn(h, w, 1, |i, j, _| if i == 0 || i + 1 == h { 0.0 } else { 0.5 * (g.get(i + 1, j, 0) - g.get(i - 1, j, 0)) });
    (gx, gy)
}

#[inline]
fn huber(r: f64, delta: f64) -> (f64, f64) {
    let a = r.abs();
    if a <= delta {
        (0.5 * r * r, 1.0)
    } else {
        (delta * a - 0.5 * delta * delta, delta / a)
    }
}

/// Rows/cols `[r0, r1) x [c0, c1)` of the moving image that contribute residuals.
#[derive(Debug, Clone, Copy)]
struct Region {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
}

struct LevelData<'a> {
    reference: &'a PixelGrid,
    gx: PixelGrid,
    gy: PixelGrid,
    moving: &'a PixelGrid,
    region: Region,
}

/// Samples a single-channel grid at `(x, y)`, requiring the footprint to
/// stay at least one pixel inside the border (where gradients are defined).
#[inline]
fn sample_interior(g: &PixelGrid, x: f64, y: f64) -> Option<f64> {
    let (h, w) = g.dims();
    if x < 1.0 || y < 1.0 || x > (w - 2) as f64 || y > (h - 2) as f64 {
        return None;
    }
    let mut acc = 0.0;
    bilinear_taps(x, y, h, w, |r, c, wt| acc += wt * g.get(r, c, 0));
    Some(acc)
}

impl LevelData<'_> {
    /// Mean robust cost over valid pixels, and the valid count.
    fn cost(&self, p: &MotionParams, delta: f64) -> (f64, usize) {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in self.region.r0..self.region.r1 {
            for j in self.region.c0..self.region.c1 {
                let (x, y) = p.apply(j as f64, i as f64);
                if let Some(v) = sample_interior(self.reference, x, y) {
                    sum += huber(v - self.moving.get(i, j, 0), delta).0;
                    n += 1;
                }
            }
        }
        if n == 0 {
            (f64::INFINITY, 0)
        } else {
            (sum / n as f64, n)
        }
    }

    fn normal_equations(&self, p: &MotionParams, delta: f64) -> (DMatrix<f64>, DVector<f64>, usize) {
        let np = p.params.len();
        let mut hmat = DMatrix::<f64>::zeros(np, np);
        let mut g = DVector::<f64>::zeros(np);
        let mut cj = vec![(0.0, 0.0); np];
        let mut jrow = vec![0.0; np];
        let mut n = 0;
        for i in self.region.r0..self.region.r1 {
            for j in self.region.c0..self.region.c1 {
                let (x, y) = p.apply(j as f64, i as f64);
                let Some(v) = sample_interior(self.reference, x, y) else { continue };
                let gx = sample_interior(&self.gx, x, y).unwrap_or(0.0);
                let gy = sample_interior(&self.gy, x, y).unwrap_or(0.0);
                let r = v - self.moving.get(i, j, 0);
                let (_, wt) = huber(r, delta);
                p.coord_jacobian(j as f64, i as f64, &mut cj);
                for (jr, &(dx, dy)) in jrow.iter_mut().zip(&cj) {
                    *jr = gx * dx + gy * dy;
                }
                for a in 0..np {
                    g[a] += wt * jrow[a] * r;
                    for b in a..np {
                        hmat[(a, b)] += wt * jrow[a] * jrow[b];
                    }
                }
                n += 1;
            }
        }
        for a in 0..np {
            for b in 0..a {
                hmat[(a, b)] = hmat[(b, a)];
            }
        }
        (hmat, g, n)
    }
}

enum LevelOutcome {
    Done { params: MotionParams, entry: f64, exit: f64, converged: bool },
    Degenerate,
}

fn is_degenerate(h: &DMatrix<f64>) -> bool {
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    !(max > 1e-12) || !(min > 0.0) || max / min > MAX_CONDITION
}

fn gauss_newton_level(data: &LevelData<'_>, init: MotionParams, cfg: &LkConfig) -> LevelOutcome {
    let delta = cfg.robust_threshold;
    let mut p = init;
    let (entry, _) = data.cost(&p, delta);
    let mut cost = entry;
    let mut converged = false;
    for _ in 0..cfg.iters_per_level {
        let (h, g, n) = data.normal_equations(&p, delta);
        if n < 2 * p.params.len() || is_degenerate(&h) {
            return LevelOutcome::Degenerate;
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&(-&g))) else {
            return LevelOutcome::Degenerate;
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = p.clone();
            for (v, s) in cand.params.iter_mut().zip(step.iter()) {
                *v += scale * s;
            }
            let (c, _) = data.cost(&cand, delta);
            if c <= cost {
                accepted = Some((cand, c));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((cand, c)) => {
                p = cand;
                cost = c;
                if scale * step.norm() < cfg.convergence_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    LevelOutcome::Done { params: p, entry, exit: cost, converged }
}

fn align_pyramids(ref_pyr: &[PixelGrid], mov_pyr: &[PixelGrid], init: &MotionParams, cfg: &LkConfig, region: Option<Region>) -> Alignment {
    let levels = ref_pyr.len();
    let mut p = init.scaled(0.5f64.powi(levels as i32 - 1));
    let mut costs = Vec::with_capacity(levels);
    let mut converged = true;
    for l in (0..levels).rev() {
        let (gx, gy) = gradients(&ref_pyr[l]);
        let (h, w) = mov_pyr[l].dims();
        let region = match region {
            Some(r) if l == 0 => r,
            _ => Region { r0: 0, r1: h, c0: 0, c1: w },
        };
        let data = LevelData { reference: &ref_pyr[l], gx, gy, moving: &mov_pyr[l], region };
        match gauss_newton_level(&data, p.clone(), cfg) {
            LevelOutcome::Done { params, entry, exit, converged: c } => {
                costs.push(LevelCost { level: l, entry, exit });
                p = params;
                converged = c;
            }
            LevelOutcome::Degenerate if l == 0 => {
                return Alignment { motion: init.clone(), status: LkStatus::Degenerate, levels: costs };
            }
            // Coarse levels may lack texture; carry the estimate down unchanged.
            LevelOutcome::Degenerate => {}
        }
        if l > 0 {
            p = p.scaled(2.0);
        }
    }
    let status = if converged { LkStatus::Converged } else { LkStatus::MaxIterations };
    Alignment { motion: p, status, levels: costs }
}

/// Estimates `p` with `reference(T_p(u)) ~ moving(u)`, coarse to fine.
pub fn lk_align(reference: &PixelGrid, moving: &PixelGrid, model: MotionModel, cfg: &LkConfig, init: &MotionParams) -> Result<Alignment> {
    cfg.validate()?;
    if reference.dims() != moving.dims() || reference.channels() != 1 || moving.channels() != 1 {
        return Err(Error::dim("lk_align needs two single-channel images of equal size"));
    }
    if init.model != model {
        return Err(Error::param(format!("initial motion is {} but model is {model}", init.model)));
    }
    let rp = build_pyramid(reference, cfg.pyramid_levels)?;
    let mp = build_pyramid(moving, cfg.pyramid_levels)?;
    Ok(align_pyramids(&rp, &mp, init, cfg, None))
}

/// Aligns every frame to frame 0 on bilinear-demosaicked grayscale images.
/// Motions are expressed on the LR grid; entry 0 is the identity.
pub fn align_burst(burst: &Burst, model: MotionModel, cfg: &LkConfig) -> Result<Vec<Alignment>> {
    cfg.validate()?;
    let grays: Vec<PixelGrid> = burst.frames().iter().map(raw_to_gray).collect();
    let ref_pyr = build_pyramid(&grays[0], cfg.pyramid_levels)?;
    let identity = MotionParams::identity(model);
    let mut out = vec![Alignment { motion: identity.clone(), status: LkStatus::Converged, levels: vec![] }];
    let rest: Vec<Result<Alignment>> = grays[1..]
        .par_iter()
        .map(|g| {
            let mp = build_pyramid(g, cfg.pyramid_levels)?;
            Ok(align_pyramids(&ref_pyr, &mp, &identity, cfg, None))
        })
        .collect();
    for a in rest {
        out.push(a?);
    }
    Ok(out)
}

/// Per-pixel displacement field: `moving(u) ~ reference(u + flow(u))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, dx: vec![0.0; height * width], dy: vec![0.0; height * width] }
    }

    pub fn at(&self, i: usize, j: usize) -> (f64, f64) {
        let k = i * self.width + j;
        (self.dx[k], self.dy[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub block: usize,
    pub lk: LkConfig,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { block: 16, lk: LkConfig { iters_per_level: 20, ..LkConfig::default() } }
    }
}

/// Block-wise translational flow: a global multiscale translation, refined
/// independently on each `block x block` tile at full resolution, then
/// bilinearly interpolated between tile centres.
pub fn block_flow(reference: &PixelGrid, moving: &PixelGrid, cfg: &FlowConfig) -> Result<FlowField> {
    if reference.dims() != moving.dims() || reference.channels() != 1 || moving.channels() != 1 {
        return Err(Error::dim("block_flow needs two single-channel images of equal size"));
    }
    if cfg.block < 4 {
        return Err(Error::param("flow blocks must be at least 4 pixels"));
    }
    let (h, w) = reference.dims();
    let levels = max_pyramid_levels(h, w, cfg.lk.pyramid_levels.max(1));
    let lk = LkConfig { pyramid_levels: levels, ..cfg.lk };
    lk.validate()?;
    let rp = build_pyramid(reference, levels)?;
    let mp = build_pyramid(moving, levels)?;
    let global = align_pyramids(&rp, &mp, &MotionParams::identity(MotionModel::Translation), &lk, None);
    let global = global.motion;

    let (bh, bw) = (h.div_ceil(cfg.block), w.div_ceil(cfg.block));
    let single = LkConfig { pyramid_levels: 1, ..lk };
    let blocks: Vec<(f64, f64)> = (0..bh * bw)
        .into_par_iter()
        .map(|b| {
            let (bi, bj) = (b / bw, b % bw);
            let region =
                Region { r0: bi * cfg.block, r1: ((bi + 1) * cfg.block).min(h), c0: bj * cfg.block, c1: ((bj + 1) * cfg.block).min(w) };
            let a = align_pyramids(&rp[..1], &mp[..1], &global, &single, Some(region));
            (a.motion.tx(), a.motion.ty())
        })
        .collect();

    let mut flow = FlowField::zeros(h, w);
    let centre = |b: usize, n: usize| -> f64 {
        let start = b * cfg.block;
        let end = ((b + 1) * cfg.block).min(n);
        (start + end - 1) as f64 / 2.0
    };
    for i in 0..h {
        // position of row i between block-centre rows
        let (b0, b1, fy) = interp_index(i as f64, bh, |b| centre(b, h));
        for j in 0..w {
            let (c0, c1, fx) = interp_index(j as f64, bw, |b| centre(b, w));
            let get = |bi: usize, bj: usize| blocks[bi * bw + bj];
            let lerp = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            let top = lerp(get(b0, c0), get(b0, c1), fx);
            let bot = lerp(get(b1, c0), get(b1, c1), fx);
            let v = lerp(top, bot, fy);
            let k = i * w + j;
            flow.dx[k] = v.0;
            flow.dy[k] = v.1;
        }
    }
    Ok(flow)
}

/// Bracketing block indices and interpolation weight, clamped at the ends.
fn interp_index(pos: f64, n: usize, centre: impl Fn(usize) -> f64) -> (usize, usize, f64) {
    if n == 1 || pos <= centre(0) {
        return (0, 0, 0.0);
    }
    if pos >= centre(n - 1) {
        return (n - 1, n - 1, 0.0);
    }
    let mut b = 0;
    while centre(b + 1) < pos {
        b += 1;
    }
    let (c0, c1) = (centre(b), centre(b + 1));
    (b, b + 1, (pos - c0) / (c1 - c0))
}

/// Samples every channel of `img` at `u + flow(u)`; the mask marks pixels
/// whose bilinear footprint stayed inside the image.
pub fn warp_by_flow(img: &PixelGrid, flow: &FlowField) -> Result<(PixelGrid, Vec<bool>)> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    if (flow.height, flow.width) != (h, w) {
        return Err(Error::dim("flow and image sizes differ"));
    }
    let mut out = PixelGrid::zeros(h, w, ch);
    let mut mask = vec![false; h * w];
    for i in 0..h {
        for j in 0..w {
            let (dx, dy) = flow.at(i, j);
            let base = out.index(i, j, 0);
            let mut acc = vec![0.0; ch];
            let inside = bilinear_taps(j as f64 + dx, i as f64 + dy, h, w, |r, c, wt| {
                for (k, a) in acc.iter_mut().enumerate() {
                    *a += wt * img.get(r, c, k);
                }
            });
            if inside {
                out.data_mut()[base..base + ch].copy_from_slice(&acc);
                mask[i * w + j] = true;
            }
        }
    }
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{warp, Direction};

    fn texture(h: usize, w: usize) -> PixelGrid {
        PixelGrid::from_fn(h, w, 1, |i, j, _| {
            let (x, y) = (j as f64, i as f64);
            0.5 + 0.2 * (0.21 * x + 0.1 * y).sin() + 0.15 * (0.13 * y - 0.07 * x).cos() + 0.1 * (0.05 * x * 0.9 + 0.31 * y).sin()
        })
    }

    #[test]
    fn pyramid_sizes_and_constants() {
        let g = PixelGrid::filled(64, 64, 1, 0.3);
        assert_eq!(build_pyramid(&g, 1).unwrap(), vec![g.clone()]);
        let pyr = build_pyramid(&g, 3).unwrap();
        let sizes: Vec<_> = pyr.iter().map(|p| p.dims()).collect();
        assert_eq!(sizes, vec![(64, 64), (32, 32), (16, 16)]);
        for l in &pyr {
            assert!(l.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
        }
        assert!(matches!(build_pyramid(&g, 5), Err(Error::Dimension(_))));
        assert_eq!(max_pyramid_levels(64, 64, 10), 4);
    }

    #[test]
    fn self_alignment_is_identity_for_every_model() {
        let g = texture(48, 48);
        for model in [MotionModel::Translation, MotionModel::Euclidean, MotionModel::Affine] {
            let a = lk_align(&g, &g, model, &LkConfig::default(), &MotionParams::identity(model)).unwrap();
            let n: f64 = a.motion.params.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n < 1e-4, "{model}: {:?}", a.motion);
        }
    }

    #[test]
    fn recovers_a_subpixel_translation() {
        let g = texture(64, 64);
        let truth = MotionParams::translation(3.25, -1.5);
        let mov = warp(&g, &truth, Direction::Apply);
        let a = lk_align(&g, &mov, MotionModel::Translation, &LkConfig::default(), &MotionParams::translation(0.0, 0.0)).unwrap();
        assert!((a.motion.tx() - 3.25).abs() < 0.05 && (a.motion.ty() + 1.5).abs() < 0.05, "{:?}", a.motion);
    }

    #[test]
    fn levels_never_end_worse_than_they_start() {
        let g = texture(64, 64);
        let mov = warp(&g, &MotionParams::euclidean(2.0, 1.0, 0.01), Direction::Apply);
        let a = lk_align(&g, &mov, MotionModel::Euclidean, &LkConfig::default(), &MotionParams::identity(MotionModel::Euclidean)).unwrap();
        assert_eq!(a.levels.len(), 3);
        for l in &a.levels {
            assert!(l.exit <= l.entry, "{l:?}");
        }
    }

    #[test]
    fn flat_images_are_degenerate() {
        let g = PixelGrid::filled(32, 32, 1, 0.5);
        let init = MotionParams::translation(0.5, 0.25);
        let a = lk_align(&g, &g, MotionModel::Translation, &LkConfig::default(), &init).unwrap();
        assert_eq!(a.status, LkStatus::Degenerate);
        assert_eq!(a.motion, init);
    }

    #[test]
    fn mismatched_init_is_rejected() {
        let g = texture(32, 32);
        let r = lk_align(&g, &g, MotionModel::Affine, &LkConfig::default(), &MotionParams::translation(0.0, 0.0));
        assert!(r.is_err());
    }

    #[test]
    fn block_flow_of_identical_images_is_zero() {
        let g = texture(48, 48);
        let f = block_flow(&g, &g, &FlowConfig::default()).unwrap();
        assert!(f.dx.iter().chain(&f.dy).all(|v| v.abs() < 1e-9));
        let (warped, mask) = warp_by_flow(&g, &f).unwrap();
        assert_eq!(warped, g);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn block_flow_tracks_a_global_shift() {
        let g = texture(64, 64);
        let mov = warp(&g, &MotionParams::translation(1.5, 0.0), Direction::Apply);
        let f = block_flow(&g, &mov, &FlowConfig::default()).unwrap();
        let (i, j) = (32, 32);
        let (dx, dy) = f.at(i, j);
        assert!((dx - 1.5).abs() < 0.05 && dy.abs() < 0.05, "{dx} {dy}");
    }
}
