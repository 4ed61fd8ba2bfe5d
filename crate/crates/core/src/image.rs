//! Image buffers, Bayer CFA handling, mosaicking and bilinear demosaicking.
//!
//! All buffers hold linear intensities as `f64`, row-major with interleaved
//! channels. Values are never clamped here; clamping only happens when an
//! image is exported to disk.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `height x width x channels` image.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::dim("channel count must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::dim(format!("buffer length {} does not match {height}x{width}x{channels}", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite sample at index {pos}")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    /// Builds a grid from `f(row, col, channel)`.
    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.width + j) * self.channels + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let k = self.index(i, j, c);
        self.data[k] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &PixelGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { height: self.height, width: self.width, channels: self.channels, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Extracts a single channel as a one-channel grid.
    pub fn channel(&self, c: usize) -> PixelGrid {
        PixelGrid::from_fn(self.height, self.width, 1, |i, j, _| self.get(i, j, c))
    }

    pub fn transpose(&self) -> PixelGrid {
        PixelGrid::from_fn(self.width, self.height, self.channels, |i, j, c| self.get(j, i, c))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<PixelGrid> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::dim(format!("crop {height}x{width}@({top},{left}) exceeds {}x{}", self.height, self.width)));
        }
        Ok(PixelGrid::from_fn(height, width, self.channels, |i, j, c| self.get(top + i, left + j, c)))
    }

    pub fn dot(&self, other: &PixelGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Phase of the 2x2 Bayer tile, named by its first row then second row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CfaPattern {
    #[default]
    Rggb,
    Grbg,
    Gbrg,
    Bggr,
}

impl CfaPattern {
    pub const ALL: [CfaPattern; 4] = [CfaPattern::Rggb, CfaPattern::Grbg, CfaPattern::Gbrg, CfaPattern::Bggr];

    /// Channel tile, indexed `[row % 2][col % 2]`; 0 = R, 1 = G, 2 = B.
    pub const fn tile(self) -> [[usize; 2]; 2] {
        match self {
            CfaPattern::Rggb => [[0, 1], [1, 2]],
            CfaPattern::Grbg => [[1, 0], [2, 1]],
            CfaPattern::Gbrg => [[1, 2], [0, 1]],
            CfaPattern::Bggr => [[2, 1], [1, 0]],
        }
    }

    #[inline]
    pub fn channel_at(self, i: usize, j: usize) -> usize {
        self.tile()[i & 1][j & 1]
    }

    /// Phase seen after transposing the image.
    pub fn transposed(self) -> CfaPattern {
        match self {
            CfaPattern::Rggb => CfaPattern::Rggb,
            CfaPattern::Bggr => CfaPattern::Bggr,
            CfaPattern::Grbg => CfaPattern::Gbrg,
            CfaPattern::Gbrg => CfaPattern::Grbg,
        }
    }

    pub fn is_transpose_invariant(self) -> bool {
        self.transposed() == self
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CfaPattern::Rggb => "RGGB",
            CfaPattern::Grbg => "GRBG",
            CfaPattern::Gbrg => "GBRG",
            CfaPattern::Bggr => "BGGR",
        }
    }
}

impl fmt::Display for CfaPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CfaPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(CfaPattern::Rggb),
            "GRBG" => Ok(CfaPattern::Grbg),
            "GBRG" => Ok(CfaPattern::Gbrg),
            "BGGR" => Ok(CfaPattern::Bggr),
            other => Err(Error::param(format!("unknown CFA pattern {other:?}"))),
        }
    }
}

/// Single-channel mosaicked frame with whole CFA tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBayerImage {
    grid: PixelGrid,
    cfa: CfaPattern,
}

impl RawBayerImage {
    pub fn new(grid: PixelGrid, cfa: CfaPattern) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::dim(format!("raw image needs 1 channel, got {}", grid.channels())));
        }
        if !grid.height().is_multiple_of(2) || !grid.width().is_multiple_of(2) {
            return Err(Error::dim(format!("raw image dims {}x{} are not whole CFA tiles", grid.height(), grid.width())));
        }
        Ok(Self { grid, cfa })
    }

    pub fn grid(&self) -> &PixelGrid {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut PixelGrid {
        &mut self.grid
    }

    pub fn into_grid(self) -> PixelGrid {
        self.grid
    }

    pub fn cfa(&self) -> CfaPattern {
        self.cfa
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.grid.get(i, j, 0)
    }

    /// Transposes the pixels; the phase tag follows the transposed tile.
    pub fn transpose(&self) -> RawBayerImage {
        RawBayerImage { grid: self.grid.transpose(), cfa: self.cfa.transposed() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorSpace {
    #[default]
    LinearSensor,
    Srgb,
}

/// Three-channel image tagged with the colour space it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    grid: PixelGrid,
    space: ColorSpace,
}

impl RgbImage {
    pub fn new(grid: PixelGrid, space: ColorSpace) -> Result<Self> {
        if grid.channels() != 3 {
            return Err(Error::dim(format!("RGB image needs 3 channels, got {}", grid.channels())));
        }
        Ok(Self { grid, space })
    }

    pub fn linear(grid: PixelGrid) -> Result<Self> {
        Self::new(grid, ColorSpace::LinearSensor)
    }

    pub fn zeros(height: usize, width: usize, space: ColorSpace) -> Self {
        Self { grid: PixelGrid::zeros(height, width, 3), space }
    }

    pub fn from_fn(height: usize, width: usize, space: ColorSpace, f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        Self { grid: PixelGrid::from_fn(height, width, 3, f), space }
    }

    pub fn grid(&self) -> &PixelGrid {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut PixelGrid {
        &mut self.grid
    }

    pub fn into_grid(self) -> PixelGrid {
        self.grid
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.grid.get(i, j, c)
    }

    pub fn transpose(&self) -> RgbImage {
        RgbImage { grid: self.grid.transpose(), space: self.space }
    }

    pub fn with_space(self, space: ColorSpace) -> RgbImage {
        RgbImage { grid: self.grid, space }
    }
}

/// Ordered burst of raw frames; frame 0 is the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    frames: Vec<RawBayerImage>,
}

impl Burst {
    pub fn new(frames: Vec<RawBayerImage>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::dim("a burst needs at least one frame"))?;
        let (dims, cfa) = (first.dims(), first.cfa());
        for (k, f) in frames.iter().enumerate() {
            if f.dims() != dims {
                return Err(Error::dim(format!("frame {k} is {:?}, reference is {dims:?}", f.dims())));
            }
            if f.cfa() != cfa {
                return Err(Error::dim(format!("frame {k} has CFA {} but reference has {cfa}", f.cfa())));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[RawBayerImage] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<RawBayerImage> {
        self.frames
    }

    pub fn reference(&self) -> &RawBayerImage {
        &self.frames[0]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn cfa(&self) -> CfaPattern {
        self.frames[0].cfa()
    }
}

/// Samples the CFA channel at every site; no interpolation.
pub fn mosaic(rgb: &RgbImage, cfa: CfaPattern) -> Result<RawBayerImage> {
    let (h, w) = rgb.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("cannot mosaic {h}x{w}: dims must be even")));
    }
    let grid = PixelGrid::from_fn(h, w, 1, |i, j, _| rgb.get(i, j, cfa.channel_at(i, j)));
    RawBayerImage::new(grid, cfa)
}

/// Reflect-101 index: -1 -> 1, n -> n - 2.
#[inline]
pub(crate) fn reflect101(k: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut k = k.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

/// Bilinear demosaicking with reflect-101 borders.
///
/// R and B use the 3x3 tent `[1 2 1; 2 4 2; 1 2 1] / 4` on the masked plane,
/// G uses the cross `[0 1 0; 1 4 1; 0 1 0] / 4`. Sampled sites are returned
/// unchanged because no same-channel neighbour lies at the positions the
/// kernels weight by less than one.
pub fn demosaic_bilinear(raw: &RawBayerImage) -> RgbImage {
    const RB: [[f64; 3]; 3] = [[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]];
    const G: [[f64; 3]; 3] = [[0.0, 0.25, 0.0], [0.25, 1.0, 0.25], [0.0, 0.25, 0.0]];
    let (h, w) = raw.dims();
    let cfa = raw.cfa();
    let mut out = PixelGrid::zeros(h, w, 3);
    for i in 0..h {
        for j in 0..w {
            let site = cfa.channel_at(i, j);
            for c in 0..3 {
                if c == site {
                    out.set(i, j, c, raw.get(i, j));
                    continue;
                }
                let kernel = if c == 1 { &G } else { &RB };
                let mut acc = 0.0;
                for (di, row) in kernel.iter().enumerate() {
                    let ii = reflect101(i as isize + di as isize - 1, h);
                    for (dj, &k) in row.iter().enumerate() {
                        if k == 0.0 {
                            continue;
                        }
                        let jj = reflect101(j as isize + dj as isize - 1, w);
                        if cfa.channel_at(ii, jj) == c {
                            acc += k * raw.get(ii, jj);
                        }
                    }
                }
                out.set(i, j, c, acc);
            }
        }
    }
    RgbImage { grid: out, space: ColorSpace::LinearSensor }
}

/// Unweighted mean of the three demosaicked channels.
pub fn raw_to_gray(raw: &RawBayerImage) -> PixelGrid {
    let rgb = demosaic_bilinear(raw);
    let (h, w) = raw.dims();
    PixelGrid::from_fn(h, w, 1, |i, j, _| (rgb.get(i, j, 0) + rgb.get(i, j, 1) + rgb.get(i, j, 2)) / 3.0)
}

/// Bilinear upsampling by an integer factor with clamped borders.
///
/// HR pixel `u` samples the input at `u / factor`, so LR pixel `i` sits on HR
/// pixel `factor * i`; this matches the sampling grid of the observation model.
pub fn upsample_bilinear(grid: &PixelGrid, factor: usize) -> PixelGrid {
    let (h, w, ch) = (grid.height(), grid.width(), grid.channels());
    let s = factor as f64;
    PixelGrid::from_fn(h * factor, w * factor, ch, |i, j, c| {
        let y = (i as f64 / s).min((h - 1) as f64);
        let x = (j as f64 / s).min((w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = grid.get(y0, x0, c) * (1.0 - fx) + grid.get(y0, x1, c) * fx;
        let bot = grid.get(y1, x0, c) * (1.0 - fx) + grid.get(y1, x1, c) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Classical single-frame baseline: bilinear demosaic then bilinear upsampling.
pub fn single_frame_baseline(raw: &RawBayerImage, factor: usize) -> RgbImage {
    let rgb = demosaic_bilinear(raw);
    RgbImage { grid: upsample_bilinear(rgb.grid(), factor), space: ColorSpace::LinearSensor }
}
