//! Test-time augmentation and subset ensembling around an HQS solve.

use burstsr::camera::{synthesize_burst, ColorPipelineParams, SynthConfig};
use burstsr::ensemble::{augment_motions, default_descriptors, subset_ensemble, subset_indices, tta_solve};
use burstsr::eval::psnr;
use burstsr::forward::ObservationModel;
use burstsr::scene::fixed_scene;
use burstsr::solver::{hqs_solve, HqsConfig, Prior};

fn main() -> burstsr::Result<()> {
    let cfg = SynthConfig { lr_dims: (32, 32), ..SynthConfig::default() };
    let (gh, gw) = cfg.hr_dims();
    let m = cfg.required_margin();
    let sample = synthesize_burst(&fixed_scene(gh + 2 * m, gw + 2 * m), &ColorPipelineParams::default(), &cfg)?;
    let motions = &sample.gt_motions;
    let hqs = HqsConfig { lambda: 4e-3, ..HqsConfig::default() };
    let model_for = |b: &burstsr::Burst| ObservationModel::new(cfg.kernel.build(cfg.sr_factor), cfg.sr_factor, b.cfa(), b.dims());

    let plain = hqs_solve(&sample.burst, motions, &cfg.observation_model()?, &Prior::tv(), &hqs)?.x;
    let descriptors = default_descriptors(cfg.frames, 11);
    let tta = tta_solve(
        |b, d| Ok(hqs_solve(b, &augment_motions(motions, d)?, &model_for(b)?, &Prior::tv(), &hqs)?.x),
        &sample.burst,
        &descriptors,
    )?;
    println!("subsets of 8: {:?}", subset_indices(cfg.frames, 8)?);
    let subsets = subset_ensemble(
        |b, idx| {
            let sub: Vec<_> = idx.iter().map(|&k| motions[k].clone()).collect();
            Ok(hqs_solve(b, &sub, &model_for(b)?, &Prior::tv(), &hqs)?.x)
        },
        &sample.burst,
        8,
    )?;
    let gt = &sample.gt_linear;
    println!("plain   {:.3} dB", psnr(&plain, gt, 1.0, None)?);
    println!("tta     {:.3} dB", psnr(&tta, gt, 1.0, None)?);
    println!("subsets {:.3} dB", psnr(&subsets, gt, 1.0, None)?);
    Ok(())
}
