//! Lucas-Kanade registration of a synthetic burst against its true motions.

use burstsr::camera::{synthesize_burst, ColorPipelineParams, NoiseParams, SynthConfig};
use burstsr::registration::{align_burst, LkConfig};
use burstsr::scene::fixed_scene;
use burstsr::MotionModel;

fn main() -> burstsr::Result<()> {
    let cfg = SynthConfig { frames: 6, lr_dims: (64, 64), noise: NoiseParams::NONE, ..SynthConfig::default() };
    let (gh, gw) = cfg.hr_dims();
    let m = cfg.required_margin();
    let sample = synthesize_burst(&fixed_scene(gh + 2 * m, gw + 2 * m), &ColorPipelineParams::default(), &cfg)?;

    let s = cfg.sr_factor as f64;
    let alignments = align_burst(&sample.burst, MotionModel::Euclidean, &LkConfig::default())?;
    let centre = (gw as f64 / 2.0, gh as f64 / 2.0);
    println!("frame  status          centre error (HR px)  rotation error (deg)");
    for (k, (a, gt)) in alignments.iter().zip(&sample.gt_motions).enumerate() {
        let est = a.motion.scaled(s);
        let (ex, ey) = est.apply(centre.0, centre.1);
        let (gx, gy) = gt.apply(centre.0, centre.1);
        let err = ((ex - gx).powi(2) + (ey - gy).powi(2)).sqrt();
        let rot = (est.theta() - gt.theta()).to_degrees();
        println!("{k:>5}  {:<14}  {err:>20.4}  {rot:>20.5}", format!("{:?}", a.status));
    }
    Ok(())
}
