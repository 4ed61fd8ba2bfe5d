//! Builds the per-frame observation operators and checks the adjoint identity.

use burstsr::camera::NoiseParams;
use burstsr::forward::{forward, forward_adjoint, KernelKind, ObservationModel};
use burstsr::scene::fixed_scene;
use burstsr::{CfaPattern, MotionParams};

fn main() -> burstsr::Result<()> {
    let model = ObservationModel::new(KernelKind::Box.build(4), 4, CfaPattern::Rggb, (16, 16))?;
    let x = fixed_scene(64, 64).with_space(burstsr::ColorSpace::LinearSensor);
    let motions =
        vec![MotionParams::euclidean(0.0, 0.0, 0.0), MotionParams::euclidean(1.5, -2.25, 0.01), MotionParams::euclidean(-3.0, 0.75, -0.02)];
    let burst = forward(&x, &motions, &model)?;
    let back = forward_adjoint(&burst, &motions, &model)?;
    let lhs: f64 = burst.frames().iter().map(|f| f.grid().dot(f.grid())).sum();
    let rhs = x.grid().dot(back.grid());
    println!("<Ux, Ux> = {lhs:.9}, <x, U^T U x> = {rhs:.9}");
    let noise = NoiseParams::challenge();
    println!("noise std at 0.5: {:.4}", noise.variance_at(0.5).sqrt());
    Ok(())
}
