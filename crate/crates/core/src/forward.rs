//! The linear observation model `y_k = D B W_{p_k} x`.
//!
//! `W_p` resamples the HR image along the motion convention of
//! [`crate::motion`], `B` is a separable blur modelling pixel integration and
//! `D` keeps every `s`-th pixel and the channel dictated by the CFA. Samples
//! whose footprint (blur support plus bilinear taps) leaves the HR domain are
//! masked: they are zero in the forward direction and ignored by the adjoint,
//! which keeps the stacked operator exactly linear.
//!
//! LR pixel `(i, j)` is centred on HR pixel `(s i, s j)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Burst, CfaPattern, ColorSpace, PixelGrid, RawBayerImage, RgbImage};
use crate::motion::MotionParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Apply,
    Adjoint,
}

/// Normalized, odd-length, separable 1-D blur taps.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    taps: Vec<f64>,
}

impl BlurKernel {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len().is_multiple_of(2) {
            return Err(Error::param(format!("blur kernel length {} must be odd", taps.len())));
        }
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("blur taps sum to {sum}, expected 1")));
        }
        Ok(Self { taps })
    }

    pub fn delta() -> Self {
        Self { taps: vec![1.0] }
    }

    /// Centred box of width `s`. Even widths get half-weight end taps.
    pub fn box_filter(s: usize) -> Self {
        let s = s.max(1);
        let taps = if s % 2 == 1 {
            vec![1.0 / s as f64; s]
        } else {
            let mut t = vec![1.0 / s as f64; s + 1];
            t[0] *= 0.5;
            t[s] *= 0.5;
            t
        };
        Self { taps }
    }

    /// Triangle of half-width `s`: anti-aliased bilinear downsampling by `s`.
    pub fn bilinear(s: usize) -> Self {
        let s = s.max(1) as isize;
        let norm = (s * s) as f64;
        let taps = (-(s - 1)..=(s - 1)).map(|a| (s - a.abs()) as f64 / norm).collect();
        Self { taps }
    }

    pub fn gaussian(sigma: f64) -> Self {
        if sigma <= 0.0 {
            return Self::delta();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let mut taps: Vec<f64> = (-radius..=radius).map(|a| (-(a * a) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        Self { taps }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.taps.len();
        (0..n / 2).all(|a| (self.taps[a] - self.taps[n - 1 - a]).abs() < 1e-15)
    }
}

/// Named kernel families, instantiated for a given scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Delta,
    /// Box of width `s`.
    #[default]
    Box,
    /// Triangle of half-width `s` (bilinear, anti-aliased).
    Bilinear,
    /// Gaussian with sigma `s / 3`.
    Gaussian,
}

impl KernelKind {
    pub fn build(self, sr_factor: usize) -> BlurKernel {
        match self {
            KernelKind::Delta => BlurKernel::delta(),
            KernelKind::Box => BlurKernel::box_filter(sr_factor),
            KernelKind::Bilinear => BlurKernel::bilinear(sr_factor),
            KernelKind::Gaussian => BlurKernel::gaussian(sr_factor as f64 / 3.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Delta => "delta",
            KernelKind::Box => "box",
            KernelKind::Bilinear => "bilinear",
            KernelKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "delta" | "none" => Ok(KernelKind::Delta),
            "box" => Ok(KernelKind::Box),
            "bilinear" | "tent" => Ok(KernelKind::Bilinear),
            "gaussian" => Ok(KernelKind::Gaussian),
            other => Err(Error::param(format!("unknown blur kernel {other:?}"))),
        }
    }
}

/// Geometry and optics shared by every frame of a burst.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub kernel: BlurKernel,
    pub sr_factor: usize,
    pub cfa: CfaPattern,
    /// When false, `D` keeps all three channels (used for toy determined systems).
    pub mosaic: bool,
    lr_dims: (usize, usize),
}

impl ObservationModel {
    pub fn new(kernel: BlurKernel, sr_factor: usize, cfa: CfaPattern, lr_dims: (usize, usize)) -> Result<Self> {
        if sr_factor == 0 {
            return Err(Error::param("sr_factor must be at least 1"));
        }
        if !lr_dims.0.is_multiple_of(2) || !lr_dims.1.is_multiple_of(2) || lr_dims.0 == 0 || lr_dims.1 == 0 {
            return Err(Error::dim(format!("LR dims {lr_dims:?} must be positive and even")));
        }
        Ok(Self { kernel, sr_factor, cfa, mosaic: true, lr_dims })
    }

    /// Model without mosaicking: every LR pixel observes all three channels.
    pub fn without_mosaic(kernel: BlurKernel, sr_factor: usize, lr_dims: (usize, usize)) -> Result<Self> {
        if sr_factor == 0 || lr_dims.0 == 0 || lr_dims.1 == 0 {
            return Err(Error::param("sr_factor and LR dims must be positive"));
        }
        Ok(Self { kernel, sr_factor, cfa: CfaPattern::Rggb, mosaic: false, lr_dims })
    }

    pub fn for_burst(burst: &Burst, kernel: BlurKernel, sr_factor: usize) -> Result<Self> {
        Self::new(kernel, sr_factor, burst.cfa(), burst.dims())
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        self.lr_dims
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        (self.lr_dims.0 * self.sr_factor, self.lr_dims.1 * self.sr_factor)
    }

    /// Number of LR samples per frame.
    pub fn samples_per_frame(&self) -> usize {
        let n = self.lr_dims.0 * self.lr_dims.1;
        if self.mosaic {
            n
        } else {
            3 * n
        }
    }

    pub fn hr_len(&self) -> usize {
        let (h, w) = self.hr_dims();
        h * w * 3
    }

    /// Channel observed by LR sample `q` (sample index within a frame).
    #[inline]
    fn sample_site(&self, q: usize) -> (usize, usize, usize) {
        let w = self.lr_dims.1;
        if self.mosaic {
            let (i, j) = (q / w, q % w);
            (i, j, self.cfa.channel_at(i, j))
        } else {
            let (pix, c) = (q / 3, q % 3);
            (pix / w, pix % w, c)
        }
    }
}

/// Visits the in-domain, nonzero bilinear taps at `(x, y)` as `(row, col, weight)`.
/// Returns whether every nonzero tap was inside the `h x w` domain.
#[inline]
pub(crate) fn bilinear_taps(x: f64, y: f64, h: usize, w: usize, mut f: impl FnMut(usize, usize, f64)) -> bool {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let weights =
        [(y0, x0, (1.0 - fy) * (1.0 - fx)), (y0, x0 + 1, (1.0 - fy) * fx), (y0 + 1, x0, fy * (1.0 - fx)), (y0 + 1, x0 + 1, fy * fx)];
    let mut inside = true;
    for (r, c, wt) in weights {
        if wt == 0.0 {
            continue;
        }
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            inside = false;
            continue;
        }
        f(r as usize, c as usize, wt);
    }
    inside
}

/// Value and spatial gradient of the bilinear interpolant of channel `c`.
/// `None` when any of the four neighbours is outside the grid.
#[inline]
pub(crate) fn bilinear_with_gradient(g: &PixelGrid, x: f64, y: f64, c: usize) -> Option<(f64, f64, f64)> {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    if x0 < 0.0 || y0 < 0.0 {
        return None;
    }
    let (x0, y0) = (x0 as usize, y0 as usize);
    if x0 + 1 >= g.width() || y0 + 1 >= g.height() {
        return None;
    }
    let v00 = g.get(y0, x0, c);
    let v01 = g.get(y0, x0 + 1, c);
    let v10 = g.get(y0 + 1, x0, c);
    let v11 = g.get(y0 + 1, x0 + 1, c);
    let top = v00 + fx * (v01 - v00);
    let bot = v10 + fx * (v11 - v10);
    let val = top + fy * (bot - top);
    let gx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10);
    let gy = bot - top;
    Some((val, gx, gy))
}

/// Warps `x` by `p` (`Apply`: `out(u) = x(T_p(u))`), or applies the exact transpose.
pub fn warp(x: &PixelGrid, p: &MotionParams, direction: Direction) -> PixelGrid {
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let mut out = PixelGrid::zeros(h, w, ch);
    for i in 0..h {
        for j in 0..w {
            let (sx, sy) = p.apply(j as f64, i as f64);
            match direction {
                Direction::Apply => {
                    let base = out.index(i, j, 0);
                    bilinear_taps(sx, sy, h, w, |r, c, wt| {
                        let src = x.index(r, c, 0);
                        for k in 0..ch {
                            out.data_mut()[base + k] += wt * x.data()[src + k];
                        }
                    });
                }
                Direction::Adjoint => {
                    let base = x.index(i, j, 0);
                    bilinear_taps(sx, sy, h, w, |r, c, wt| {
                        let dst = out.index(r, c, 0);
                        for k in 0..ch {
                            out.data_mut()[dst + k] += wt * x.data()[base + k];
                        }
                    });
                }
            }
        }
    }
    out
}

/// Per-pixel flag: the bilinear footprint of `T_p(u)` lies inside the domain.
pub fn warp_mask(height: usize, width: usize, p: &MotionParams) -> Vec<bool> {
    let mut mask = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let (sx, sy) = p.apply(j as f64, i as f64);
            mask.push(bilinear_taps(sx, sy, height, width, |_, _, _| {}));
        }
    }
    mask
}

fn conv_axis(x: &PixelGrid, taps: &[f64], along_rows: bool, direction: Direction) -> PixelGrid {
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let r = (taps.len() / 2) as isize;
    let mut out = PixelGrid::zeros(h, w, ch);
    let n = if along_rows { h } else { w } as isize;
    for i in 0..h {
        for j in 0..w {
            let pos = if along_rows { i } else { j } as isize;
            let dst = out.index(i, j, 0);
            for (t, &k) in taps.iter().enumerate() {
                let a = t as isize - r;
                // apply: out[n] = sum_a k[a] in[n - a]; adjoint: out[m] = sum_a k[a] in[m + a]
                let src = match direction {
                    Direction::Apply => pos - a,
                    Direction::Adjoint => pos + a,
                };
                if src < 0 || src >= n {
                    continue;
                }
                let (si, sj) = if along_rows { (src as usize, j) } else { (i, src as usize) };
                let s = x.index(si, sj, 0);
                for c in 0..ch {
                    out.data_mut()[dst + c] += k * x.data()[s + c];
                }
            }
        }
    }
    out
}

/// Separable zero-padded convolution (`Apply`) or its transpose (`Adjoint`).
pub fn blur(x: &PixelGrid, kernel: &BlurKernel, direction: Direction) -> PixelGrid {
    let tmp = conv_axis(x, kernel.taps(), true, direction);
    conv_axis(&tmp, kernel.taps(), false, direction)
}

/// `D`: keep HR pixel `(s i, s j)` and the CFA channel of LR site `(i, j)`.
pub fn decimate_mosaic(x: &RgbImage, model: &ObservationModel) -> Result<RawBayerImage> {
    check_hr(x.grid(), model)?;
    if !model.mosaic {
        return Err(Error::param("decimate_mosaic needs a mosaicking model; use decimate_rgb"));
    }
    let (lh, lw) = model.lr_dims();
    let s = model.sr_factor;
    let grid = PixelGrid::from_fn(lh, lw, 1, |i, j, _| x.get(s * i, s * j, model.cfa.channel_at(i, j)));
    RawBayerImage::new(grid, model.cfa)
}

/// `D^T`: scatter each raw value into its CFA channel at HR pixel `(s i, s j)`.
pub fn decimate_mosaic_adjoint(raw: &RawBayerImage, model: &ObservationModel) -> Result<RgbImage> {
    if raw.dims() != model.lr_dims() {
        return Err(Error::dim(format!("raw is {:?}, model expects {:?}", raw.dims(), model.lr_dims())));
    }
    let (hh, hw) = model.hr_dims();
    let s = model.sr_factor;
    let mut out = PixelGrid::zeros(hh, hw, 3);
    let (lh, lw) = model.lr_dims();
    for i in 0..lh {
        for j in 0..lw {
            out.set(s * i, s * j, model.cfa.channel_at(i, j), raw.get(i, j));
        }
    }
    RgbImage::new(out, ColorSpace::LinearSensor)
}

fn check_hr(x: &PixelGrid, model: &ObservationModel) -> Result<()> {
    let (h, w) = x.dims();
    let s = model.sr_factor;
    if h % s != 0 || w % s != 0 {
        return Err(Error::dim(format!("HR dims {h}x{w} not divisible by factor {s}")));
    }
    if (h, w) != model.hr_dims() {
        return Err(Error::dim(format!("HR dims {h}x{w}, model expects {:?}", model.hr_dims())));
    }
    Ok(())
}

/// Visits the blur taps feeding LR site `(i, j)`: HR position `(row, col)` and weight.
/// Returns false when any tap falls outside the HR grid.
#[inline]
fn blur_taps(model: &ObservationModel, i: usize, j: usize, mut f: impl FnMut(f64, f64, f64)) -> bool {
    let taps = model.kernel.taps();
    let r = (taps.len() / 2) as isize;
    let (hh, hw) = model.hr_dims();
    let (ci, cj) = ((model.sr_factor * i) as isize, (model.sr_factor * j) as isize);
    let mut inside = true;
    for (ta, &ka) in taps.iter().enumerate() {
        let vi = ci - (ta as isize - r);
        for (tb, &kb) in taps.iter().enumerate() {
            let vj = cj - (tb as isize - r);
            if vi < 0 || vj < 0 || vi >= hh as isize || vj >= hw as isize {
                inside = false;
                continue;
            }
            f(vi as f64, vj as f64, ka * kb);
        }
    }
    inside
}

/// One frame of `U_p` as a sparse row matrix over the interleaved HR buffer.
#[derive(Debug, Clone)]
pub struct FrameOperator {
    row_ptr: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f32>,
    mask: Vec<bool>,
}

impl FrameOperator {
    pub fn build(model: &ObservationModel, p: &MotionParams) -> Result<Self> {
        let (hh, hw) = model.hr_dims();
        if model.hr_len() > u32::MAX as usize {
            return Err(Error::dim("HR image too large for 32-bit operator indices"));
        }
        let n = model.samples_per_frame();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut mask = Vec::with_capacity(n);
        let mut row: Vec<(u32, f64)> = Vec::with_capacity(128);
        row_ptr.push(0u32);
        for q in 0..n {
            let (i, j, c) = model.sample_site(q);
            row.clear();
            let mut valid = blur_taps(model, i, j, |vi, vj, kw| {
                let (sx, sy) = p.apply(vj, vi);
                let ok = bilinear_taps(sx, sy, hh, hw, |r, cc, bw| {
                    row.push((((r * hw + cc) * 3 + c) as u32, kw * bw));
                });
                if !ok {
                    // poison the row; checked below
                    row.push((u32::MAX, f64::NAN));
                }
            });
            valid &= !row.iter().any(|&(k, _)| k == u32::MAX);
            if valid {
                row.sort_unstable_by_key(|&(k, _)| k);
                let mut last = u32::MAX;
                for &(k, v) in &row {
                    if k == last {
                        let l = vals.len() - 1;
                        vals[l] = (vals[l] as f64 + v) as f32;
                    } else {
                        cols.push(k);
                        vals.push(v as f32);
                        last = k;
                    }
                }
            }
            mask.push(valid);
            row_ptr.push(cols.len() as u32);
        }
        Ok(Self { row_ptr, cols, vals, mask })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// `out[q] = (U_k x)[q]`; zero on masked samples.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (q, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[q] as usize, self.row_ptr[q + 1] as usize);
            let mut acc = 0.0;
            for t in a..b {
                acc += self.vals[t] as f64 * x[self.cols[t] as usize];
            }
            *o = acc;
        }
    }

    /// `out += U_k^T y`; masked samples of `y` are ignored.
    pub fn adjoint_add(&self, y: &[f64], out: &mut [f64]) {
        for (q, &v) in y.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let (a, b) = (self.row_ptr[q] as usize, self.row_ptr[q + 1] as usize);
            for t in a..b {
                out[self.cols[t] as usize] += self.vals[t] as f64 * v;
            }
        }
    }
}

/// The stacked operator `U_p` over a whole burst.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    model: ObservationModel,
    frames: Vec<FrameOperator>,
}

impl ForwardOperator {
    pub fn new(model: &ObservationModel, motions: &[MotionParams]) -> Result<Self> {
        if motions.is_empty() {
            return Err(Error::dim("at least one motion is required"));
        }
        let frames = motions.iter().map(|p| FrameOperator::build(model, p)).collect::<Result<_>>()?;
        Ok(Self { model: model.clone(), frames })
    }

    pub fn model(&self) -> &ObservationModel {
        &self.model
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, k: usize) -> &FrameOperator {
        &self.frames[k]
    }

    /// Replaces the operator of frame `k` after its motion changed.
    pub fn set_motion(&mut self, k: usize, p: &MotionParams) -> Result<()> {
        self.frames[k] = FrameOperator::build(&self.model, p)?;
        Ok(())
    }

    pub fn mask(&self, k: usize) -> &[bool] {
        self.frames[k].mask()
    }

    pub fn zeros_lr(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.model.samples_per_frame()]; self.frames.len()]
    }

    pub fn apply(&self, x: &[f64], out: &mut [Vec<f64>]) {
        for (f, o) in self.frames.iter().zip(out.iter_mut()) {
            f.apply(x, o);
        }
    }

    /// `out = U^T y`, accumulated over frames in index order.
    pub fn adjoint(&self, y: &[Vec<f64>], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (f, yk) in self.frames.iter().zip(y) {
            f.adjoint_add(yk, out);
        }
    }

    /// Observations of a burst as flat vectors, zeroed on masked samples.
    pub fn observations(&self, burst: &Burst) -> Result<Vec<Vec<f64>>> {
        if burst.len() != self.frames.len() {
            return Err(Error::dim(format!("burst has {} frames, operator {}", burst.len(), self.frames.len())));
        }
        if !self.model.mosaic || burst.dims() != self.model.lr_dims() {
            return Err(Error::dim("burst does not match the observation model"));
        }
        Ok(burst
            .frames()
            .iter()
            .zip(&self.frames)
            .map(|(f, op)| f.grid().data().iter().zip(op.mask()).map(|(&v, &m)| if m { v } else { 0.0 }).collect())
            .collect())
    }

    /// `U_p^T 1` restricted to valid samples.
    pub fn coverage(&self) -> Vec<f64> {
        let ones: Vec<Vec<f64>> = self.frames.iter().map(|f| f.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()).collect();
        let mut out = vec![0.0; self.model.hr_len()];
        self.adjoint(&ones, &mut out);
        out
    }
}

/// Noise-free burst `D B W_{p_k} x` for every motion (masked samples are zero).
pub fn forward(x: &RgbImage, motions: &[MotionParams], model: &ObservationModel) -> Result<Burst> {
    check_hr(x.grid(), model)?;
    let op = ForwardOperator::new(model, motions)?;
    let mut out = op.zeros_lr();
    op.apply(x.grid().data(), &mut out);
    let (lh, lw) = model.lr_dims();
    let frames = out.into_iter().map(|d| RawBayerImage::new(PixelGrid::new(lh, lw, 1, d)?, model.cfa)).collect::<Result<Vec<_>>>()?;
    Burst::new(frames)
}

/// `sum_k W_{p_k}^T B^T D^T y_k` over valid samples.
pub fn forward_adjoint(burst: &Burst, motions: &[MotionParams], model: &ObservationModel) -> Result<RgbImage> {
    let op = ForwardOperator::new(model, motions)?;
    let y = op.observations(burst)?;
    let mut out = vec![0.0; model.hr_len()];
    op.adjoint(&y, &mut out);
    let (hh, hw) = model.hr_dims();
    RgbImage::linear(PixelGrid::new(hh, hw, 3, out)?)
}

/// `D B W_p x` through the individual image-domain operators, without masking.
pub fn forward_chain(x: &RgbImage, p: &MotionParams, model: &ObservationModel) -> Result<RawBayerImage> {
    let warped = warp(x.grid(), p, Direction::Apply);
    let blurred = blur(&warped, &model.kernel, Direction::Apply);
    decimate_mosaic(&RgbImage::linear(blurred)?, model)
}

/// `d(W_p x)/dp_j` for every parameter, from the exact derivative of the
/// bilinear interpolant and the analytic coordinate Jacobian. Zero where the
/// four-neighbour footprint leaves the domain.
pub fn warp_jacobian(x: &PixelGrid, p: &MotionParams) -> Vec<PixelGrid> {
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let np = p.params.len();
    let mut out = vec![PixelGrid::zeros(h, w, ch); np];
    let mut cj = vec![(0.0, 0.0); np];
    for i in 0..h {
        for j in 0..w {
            let (sx, sy) = p.apply(j as f64, i as f64);
            p.coord_jacobian(j as f64, i as f64, &mut cj);
            for c in 0..ch {
                if let Some((_, gx, gy)) = bilinear_with_gradient(x, sx, sy, c) {
                    for (k, &(dx, dy)) in cj.iter().enumerate() {
                        out[k].set(i, j, c, gx * dx + gy * dy);
                    }
                }
            }
        }
    }
    out
}

/// LR response of one frame and, optionally, its Jacobian in the motion parameters.
#[derive(Debug, Clone)]
pub struct FrameResponse {
    pub values: Vec<f64>,
    /// `jacobian[j][q]`: derivative of sample `q` with respect to parameter `j`.
    pub jacobian: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

/// Evaluates `D B W_p x` sample by sample, with `d/dp` when `with_jacobian`.
pub fn frame_response(x: &PixelGrid, p: &MotionParams, model: &ObservationModel, with_jacobian: bool) -> FrameResponse {
    let n = model.samples_per_frame();
    let np = p.params.len();
    let mut values = vec![0.0; n];
    let mut jacobian = if with_jacobian { vec![vec![0.0; n]; np] } else { Vec::new() };
    let mut mask = vec![false; n];
    let mut cj = vec![(0.0, 0.0); np];
    let mut g = vec![0.0; np];
    for q in 0..n {
        let (i, j, c) = model.sample_site(q);
        let mut acc = 0.0;
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut ok = true;
        let inside = blur_taps(model, i, j, |vi, vj, kw| {
            if !ok {
                return;
            }
            let (sx, sy) = p.apply(vj, vi);
            match bilinear_with_gradient(x, sx, sy, c) {
                Some((v, gx, gy)) => {
                    acc += kw * v;
                    if with_jacobian {
                        p.coord_jacobian(vj, vi, &mut cj);
                        for (gk, &(dx, dy)) in g.iter_mut().zip(&cj) {
                            *gk += kw * (gx * dx + gy * dy);
                        }
                    }
                }
                None => ok = false,
            }
        });
        if inside && ok {
            mask[q] = true;
            values[q] = acc;
            if with_jacobian {
                for (jk, &gk) in jacobian.iter_mut().zip(&g) {
                    jk[q] = gk;
                }
            }
        }
    }
    FrameResponse { values, jacobian, mask }
}
