//! Deterministic procedural sRGB scenes used by examples, benchmarks and tests.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{ColorSpace, RgbImage};

/// Seed of the fixed textured scene the benchmarks are recorded on.
pub const FIXED_SCENE_SEED: u64 = 2021;

enum Shape {
    Rect { top: f64, left: f64, bottom: f64, right: f64, color: [f64; 3] },
    Disc { cy: f64, cx: f64, r: f64, color: [f64; 3] },
}

struct Grating {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: [f64; 3],
}

/// A textured sRGB image: smooth colour gradient, oriented gratings spanning
/// low to near-Nyquist-at-LR frequencies, and flat shapes with sharp edges.
pub fn textured_scene(height: usize, width: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);

    let base: [[f64; 3]; 2] = [
        [rng.random_range(0.3..0.6), rng.random_range(0.3..0.6), rng.random_range(0.3..0.6)],
        [rng.random_range(0.3..0.6), rng.random_range(0.3..0.6), rng.random_range(0.3..0.6)],
    ];
    let gratings: Vec<Grating> = (0..6)
        .map(|_| {
            let f = rng.random_range(0.02..0.16);
            let th = rng.random_range(0.0..std::f64::consts::PI);
            Grating {
                fx: f * th.cos(),
                fy: f * th.sin(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: [rng.random_range(0.02..0.08), rng.random_range(0.02..0.08), rng.random_range(0.02..0.08)],
            }
        })
        .collect();
    let mut shapes = Vec::new();
    for _ in 0..12 {
        let color = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
        if rng.random_bool(0.5) {
            let (top, left) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
            let (dh, dw) = (rng.random_range(0.05..0.3) * h, rng.random_range(0.05..0.3) * w);
            shapes.push(Shape::Rect { top, left, bottom: top + dh, right: left + dw, color });
        } else {
            let r = rng.random_range(0.03..0.15) * h.min(w);
            shapes.push(Shape::Disc { cy: rng.random_range(0.0..h), cx: rng.random_range(0.0..w), r, color });
        }
    }

    RgbImage::from_fn(height, width, ColorSpace::Srgb, |i, j, c| {
        let (y, x) = (i as f64, j as f64);
        let t = (x / w + y / h) / 2.0;
        let mut v = base[0][c] * (1.0 - t) + base[1][c] * t;
        for g in &gratings {
            v += g.amp[c] * (std::f64::consts::TAU * (g.fx * x + g.fy * y) + g.phase).sin();
        }
        for s in &shapes {
            match *s {
                Shape::Rect { top, left, bottom, right, color } => {
                    if y >= top && y < bottom && x >= left && x < right {
                        v = 0.35 * v + 0.65 * color[c];
                    }
                }
                Shape::Disc { cy, cx, r, color } => {
                    if (y - cy).powi(2) + (x - cx).powi(2) < r * r {
                        v = 0.35 * v + 0.65 * color[c];
                    }
                }
            }
        }
        v.clamp(0.02, 0.98)
    })
}

/// The fixed benchmark scene at the requested size.
pub fn fixed_scene(height: usize, width: usize) -> RgbImage {
    textured_scene(height, width, FIXED_SCENE_SEED)
}
