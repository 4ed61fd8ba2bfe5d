//! On-disk formats: 16-bit PNGs for raw frames and linear RGB, JSON sidecars.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Transformations};
use serde::{Deserialize, Serialize};

use crate::camera::NoiseParams;
use crate::error::{Error, Result};
use crate::forward::KernelKind;
use crate::image::{Burst, CfaPattern, ColorSpace, PixelGrid, RawBayerImage, RgbImage};
use crate::motion::MotionParams;

/// Decoded PNG samples normalized to `[0, 1]`.
pub struct PngImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

pub fn read_png(path: &Path) -> Result<PngImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let fmt = |e: png::DecodingError| Error::format(path, e.to_string());
    let mut reader = decoder.read_info().map_err(fmt)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(Error::format(path, "palette images are not supported")),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let samples: Vec<f64> = match info.bit_depth {
        BitDepth::Sixteen => buf[..h * info.line_size]
            .chunks_exact(info.line_size)
            .flat_map(|row| row[..w * channels * 2].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0))
            .collect(),
        BitDepth::Eight => buf[..h * info.line_size]
            .chunks_exact(info.line_size)
            .flat_map(|row| row[..w * channels].iter().map(|&b| b as f64 / 255.0))
            .collect(),
        other => return Err(Error::format(path, format!("unsupported bit depth {other:?}"))),
    };
    Ok(PngImage { height: h, width: w, channels, data: samples })
}

fn quantize(v: f64) -> [u8; 2] {
    ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes()
}

/// Writes a 16-bit grayscale or RGB PNG; values are clamped to `[0, 1]`.
pub fn write_png16(path: &Path, grid: &PixelGrid) -> Result<()> {
    let color = match grid.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => return Err(Error::dim(format!("cannot store {c}-channel images"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), grid.width() as u32, grid.height() as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Sixteen);
    let fmt = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(fmt)?;
    let bytes: Vec<u8> = grid.data().iter().flat_map(|&v| quantize(v)).collect();
    writer.write_image_data(&bytes).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

/// Reads an RGB image (alpha dropped, gray replicated) tagged with `space`.
pub fn read_rgb(path: &Path, space: ColorSpace) -> Result<RgbImage> {
    let img = read_png(path)?;
    let c = img.channels;
    let grid = PixelGrid::from_fn(img.height, img.width, 3, |i, j, ch| {
        let base = (i * img.width + j) * c;
        if c >= 3 {
            img.data[base + ch]
        } else {
            img.data[base]
        }
    });
    RgbImage::new(grid, space)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    write_png16(path, img.grid())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Sidecar describing a burst directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstMeta {
    pub cfa: CfaPattern,
    pub frames: usize,
    pub sr_factor: usize,
    pub lr_height: usize,
    pub lr_width: usize,
    /// Blur kernel used during synthesis.
    pub kernel: KernelKind,
    pub noise: NoiseParams,
    /// HR-scale ground-truth motions, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_motions: Option<Vec<MotionParams>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A burst directory: `frame_XX.png`, `meta.json` and an optional `gt.png`.
#[derive(Debug, Clone)]
pub struct BurstOnDisk {
    pub burst: Burst,
    pub meta: BurstMeta,
    pub gt: Option<RgbImage>,
}

pub fn frame_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("frame_{k:02}.png"))
}

impl BurstOnDisk {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, f) in self.burst.frames().iter().enumerate() {
            write_png16(&frame_path(dir, k), f.grid())?;
        }
        if let Some(gt) = &self.gt {
            write_rgb(&dir.join("gt.png"), gt)?;
        }
        write_json(&dir.join("meta.json"), &self.meta)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta: BurstMeta = read_json(&dir.join("meta.json"))?;
        if meta.frames == 0 {
            return Err(Error::format(dir, "meta.json lists no frames"));
        }
        let mut frames = Vec::with_capacity(meta.frames);
        for k in 0..meta.frames {
            let path = frame_path(dir, k);
            let img = read_png(&path)?;
            if img.channels != 1 {
                return Err(Error::format(&path, "raw frames must be single-channel"));
            }
            if (img.height, img.width) != (meta.lr_height, meta.lr_width) {
                return Err(Error::format(
                    &path,
                    format!("{}x{} frame, meta says {}x{}", img.height, img.width, meta.lr_height, meta.lr_width),
                ));
            }
            frames.push(RawBayerImage::new(PixelGrid::new(img.height, img.width, 1, img.data)?, meta.cfa)?);
        }
        let extra = frame_path(dir, meta.frames);
        if extra.exists() {
            return Err(Error::format(dir, format!("found {} but meta lists {} frames", extra.display(), meta.frames)));
        }
        if let Some(m) = &meta.gt_motions {
            if m.len() != meta.frames {
                return Err(Error::format(dir, "gt_motions length differs from the frame count"));
            }
        }
        let gt_path = dir.join("gt.png");
        let gt = if gt_path.exists() {
            let gt = read_rgb(&gt_path, ColorSpace::LinearSensor)?;
            if gt.dims() != (meta.lr_height * meta.sr_factor, meta.lr_width * meta.sr_factor) {
                return Err(Error::format(&gt_path, "ground truth size does not match sr_factor x LR size"));
            }
            Some(gt)
        } else {
            None
        };
        Ok(Self { burst: Burst::new(frames)?, meta, gt })
    }
}
