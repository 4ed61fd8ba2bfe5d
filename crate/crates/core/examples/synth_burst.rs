//! Synthesizes a RAW burst from the built-in scene and writes it to disk.
//!
//! `cargo run --example synth_burst -- [out_dir] [seed]`

use std::path::PathBuf;

use burstsr::camera::{synthesize_burst, ColorPipelineParams, SynthConfig};
use burstsr::cli::{BurstMeta, BurstOnDisk};
use burstsr::scene::fixed_scene;

fn main() -> burstsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example_burst".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    let cfg = SynthConfig { lr_dims: (48, 48), seed, ..SynthConfig::default() };
    let (gh, gw) = cfg.hr_dims();
    let margin = cfg.required_margin();
    let scene = fixed_scene(gh + 2 * margin, gw + 2 * margin);
    let sample = synthesize_burst(&scene, &ColorPipelineParams::default(), &cfg)?;

    for (k, p) in sample.gt_motions.iter().enumerate().take(4) {
        println!("frame {k}: tx {:+.2} ty {:+.2} theta {:+.4} rad", p.tx(), p.ty(), p.theta());
    }
    let meta = BurstMeta {
        cfa: cfg.cfa,
        frames: cfg.frames,
        sr_factor: cfg.sr_factor,
        lr_height: cfg.lr_dims.0,
        lr_width: cfg.lr_dims.1,
        kernel: cfg.kernel,
        noise: sample.noise,
        gt_motions: Some(sample.gt_motions),
        seed: Some(seed),
    };
    BurstOnDisk { burst: sample.burst, meta, gt: Some(sample.gt_linear) }.write(&out)?;
    println!("wrote {} frames to {}", cfg.frames, out.display());
    Ok(())
}
