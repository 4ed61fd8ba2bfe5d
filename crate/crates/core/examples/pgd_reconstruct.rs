//! Proximal gradient descent under each prior, with the step from power iteration.

use burstsr::camera::{synthesize_burst, ColorPipelineParams, SynthConfig};
use burstsr::eval::psnr;
use burstsr::scene::fixed_scene;
use burstsr::solver::{pgd_solve, PgdConfig, Prior};

fn main() -> burstsr::Result<()> {
    let cfg = SynthConfig { lr_dims: (32, 32), ..SynthConfig::default() };
    let (gh, gw) = cfg.hr_dims();
    let m = cfg.required_margin();
    let sample = synthesize_burst(&fixed_scene(gh + 2 * m, gw + 2 * m), &ColorPipelineParams::default(), &cfg)?;
    let model = cfg.observation_model()?;

    for prior in [Prior::None, Prior::Tikhonov, Prior::tv()] {
        let pgd = PgdConfig { noise: Some(sample.noise), ..PgdConfig::default() };
        let est = pgd_solve(&sample.burst, &sample.gt_motions, &model, &prior, &pgd)?;
        let obj = &est.diagnostics.objective;
        println!(
            "{:<9} psnr {:.2} dB  L {:.3e}  objective {:.4e} -> {:.4e}",
            prior.name(),
            psnr(&est.x, &sample.gt_linear, 1.0, None)?,
            est.diagnostics.lipschitz.unwrap_or(0.0),
            obj[0],
            obj[obj.len() - 1]
        );
    }
    Ok(())
}
