//! Plain and alignment-based scoring of a shifted, recoloured prediction.

use burstsr::camera::{unprocess, ColorPipelineParams};
use burstsr::eval::{aligned_score, score, AlignConfig, ColorMap3x3, SsimConfig};
use burstsr::forward::{warp, Direction};
use burstsr::scene::textured_scene;
use burstsr::{MotionParams, RgbImage};

fn main() -> burstsr::Result<()> {
    let (h, w) = (128, 128);
    let scene = unprocess(&textured_scene(h + 16, w + 16, 5), &ColorPipelineParams::default())?;
    let gt = RgbImage::linear(scene.grid().crop(8, 8, h, w)?)?;

    let moved = warp(scene.grid(), &MotionParams::translation(1.3, -0.8), Direction::Apply).crop(8, 8, h, w)?;
    let tint = ColorMap3x3 { m: [[0.95, 0.05, 0.0], [0.0, 1.05, 0.0], [0.02, 0.0, 0.9]] };
    let pred = tint.apply(&RgbImage::linear(moved)?);

    let plain = score(&pred, &gt, 1.0, &SsimConfig::default())?;
    let aligned = aligned_score(&pred, &gt, &AlignConfig::default())?;
    println!("plain   {}", serde_json::to_string(&plain).unwrap());
    println!("aligned {}", serde_json::to_string(&aligned).unwrap());
    Ok(())
}
