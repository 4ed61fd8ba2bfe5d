use super::*;
use crate::camera::{unprocess, ColorPipelineParams};
use crate::forward::{forward, BlurKernel};
use crate::image::{CfaPattern, RawBayerImage};
use crate::scene::textured_scene;
use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn determined(h: usize, w: usize, seed: u64) -> (Problem, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ObservationModel::without_mosaic(BlurKernel::delta(), 1, (h, w)).unwrap();
    let frame = RgbImage::from_fn(h, w, crate::ColorSpace::LinearSensor, |_, _, _| rng.random_range(0.1..0.9));
    let y = frame.grid().data().to_vec();
    let p = Problem::from_frames(&[frame], &[MotionParams::euclidean(0.0, 0.0, 0.0)], &model).unwrap();
    (p, y)
}

fn linear_scene(h: usize, w: usize, seed: u64) -> RgbImage {
    unprocess(&textured_scene(h, w, seed), &ColorPipelineParams::default()).unwrap()
}

fn small_motions() -> Vec<MotionParams> {
    vec![
        MotionParams::euclidean(0.0, 0.0, 0.0),
        MotionParams::euclidean(1.3, -0.7, 0.004),
        MotionParams::euclidean(-2.1, 1.6, -0.006),
        MotionParams::euclidean(0.6, 2.4, 0.002),
    ]
}

/// Textured HR scene, clean burst and problem at the true motions.
fn textured_problem(lr: usize, s: usize) -> (RgbImage, Burst, ObservationModel, Vec<MotionParams>) {
    let gt = linear_scene(lr * s, lr * s, 7);
    let model = ObservationModel::new(BlurKernel::box_filter(s), s, CfaPattern::Rggb, (lr, lr)).unwrap();
    let motions = small_motions();
    let burst = forward(&gt, &motions, &model).unwrap();
    (gt, burst, model, motions)
}

#[test]
fn init_of_a_determined_system_is_the_frame() {
    let (p, y) = determined(6, 5, 1);
    let x0 = p.init_estimate();
    for (a, b) in x0.iter().zip(&y) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn init_of_a_constant_burst_is_constant_where_covered() {
    let model = ObservationModel::new(BlurKernel::box_filter(2), 2, CfaPattern::Rggb, (8, 8)).unwrap();
    let frames: Vec<RawBayerImage> =
        (0..3).map(|_| RawBayerImage::new(PixelGrid::filled(8, 8, 1, 0.4), CfaPattern::Rggb).unwrap()).collect();
    let burst = Burst::new(frames).unwrap();
    let motions = &small_motions()[..3];
    let problem = Problem::from_burst(&burst, motions, &model).unwrap();
    let cov = problem.operator().coverage();
    let x0 = problem.init_estimate();
    for (v, c) in x0.iter().zip(&cov) {
        assert!((v - 0.4).abs() < 1e-6, "{v} at coverage {c}");
    }
}

#[test]
fn z_step_with_huge_mu_stays_at_x() {
    let (gt, burst, model, motions) = textured_problem(12, 2);
    let problem = Problem::from_burst(&burst, &motions, &model).unwrap();
    let x = gt.grid().data().iter().map(|v| v * 0.9).collect::<Vec<_>>();
    let mut z = x.clone();
    z_step(&problem, &x, &mut z, 1e8, &HqsConfig::default()).unwrap();
    let d: f64 = z.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let n: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(d / n < 1e-3);
}

#[test]
fn z_step_of_a_determined_system_averages() {
    let (p, y) = determined(5, 4, 2);
    let x: Vec<f64> = (0..y.len()).map(|k| (k % 5) as f64 * 0.1).collect();
    let mut z = x.clone();
    z_step(&p, &x, &mut z, 1.0, &HqsConfig::default()).unwrap();
    for k in 0..y.len() {
        assert!((z[k] - 0.5 * (y[k] + x[k])).abs() < 1e-12);
    }
}

#[test]
fn z_step_matches_a_dense_direct_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = ObservationModel::new(BlurKernel::gaussian(0.8), 2, CfaPattern::Grbg, (8, 8)).unwrap();
    let hr = RgbImage::from_fn(16, 16, crate::ColorSpace::LinearSensor, |_, _, _| rng.random_range(0.0..1.0));
    let motions = small_motions();
    let burst = forward(&hr, &motions, &model).unwrap();
    let problem = Problem::from_burst(&burst, &motions, &model).unwrap();
    let n = problem.hr_len();
    let mu = 0.05;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();

    // Explicit matrix, column by column.
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut scratch = problem.operator().zeros_lr();
    let mut col = vec![0.0; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        problem.normal_apply(&e, &mut scratch, &mut col);
        for i in 0..n {
            a[(i, j)] = col[i] + if i == j { mu } else { 0.0 };
        }
    }
    let mut rhs = vec![0.0; n];
    problem.operator().adjoint(problem.observations(), &mut rhs);
    let b = DVector::from_iterator(n, rhs.iter().zip(&x).map(|(r, xi)| r + mu * xi));
    let direct = a.lu().solve(&b).unwrap();

    let mut z = x.clone();
    let cfg = HqsConfig { cg_iters: 500, cg_tol: 1e-12, ..Default::default() };
    z_step(&problem, &x, &mut z, mu, &cfg).unwrap();
    for i in 0..n {
        assert!((z[i] - direct[i]).abs() < 1e-5, "{i}: {} vs {}", z[i], direct[i]);
    }
}

#[test]
fn x_step_trivial_cases_and_tv_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = (16, 16);
    let z: Vec<f64> = (0..h * w * 3).map(|k| if (k / 3) % w < 8 { 0.2 } else { 0.7 } + rng.random_range(-0.02..0.02)).collect();
    assert_eq!(x_step(&z, (h, w), 1.0, 0.3, &Prior::None), z);
    assert_eq!(x_step(&z, (h, w), 1.0, 0.0, &Prior::tv()), z);
    let x = x_step(&z, (h, w), 1.0, 0.05, &Prior::tv());
    assert!(tv_value(&x, h, w, 3) < tv_value(&z, h, w, 3));
}

#[test]
fn tv_prox_matches_a_subgradient_oracle() {
    let (n, tau) = (32usize, 0.1);
    let z: Vec<f64> = (0..n * n).map(|k| if k % n >= 16 { 1.0 } else { 0.0 }).collect();
    let obj = |x: &[f64]| 0.5 * x.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + tau * tv_value(x, n, n, 1);
    let (x, _) = tv_prox(&z, n, n, 1, tau, &TvSettings { inner_iters: 1000, tol: 1e-9 });

    // Subgradient descent on the primal with 1/k steps (the objective is 1-strongly convex).
    let mut u = z.clone();
    let mut best = obj(&u);
    let mut sub = vec![0.0; n * n];
    for k in 1..=20_000 {
        sub.iter_mut().zip(u.iter().zip(&z)).for_each(|(s, (a, b))| *s = a - b);
        for i in 0..n {
            for j in 0..n {
                let c = u[i * n + j];
                let dx = if j + 1 < n { u[i * n + j + 1] - c } else { 0.0 };
                let dy = if i + 1 < n { u[(i + 1) * n + j] - c } else { 0.0 };
                let m = (dx * dx + dy * dy).sqrt();
                if m > 0.0 {
                    let (gx, gy) = (tau * dx / m, tau * dy / m);
                    sub[i * n + j] -= gx + gy;
                    if j + 1 < n {
                        sub[i * n + j + 1] += gx;
                    }
                    if i + 1 < n {
                        sub[(i + 1) * n + j] += gy;
                    }
                }
            }
        }
        let step = 1.0 / (k as f64 + 1.0);
        u.iter_mut().zip(&sub).for_each(|(a, g)| *a -= step * g);
        best = best.min(obj(&u));
    }
    let ours = obj(&x);
    assert!((ours - best).abs() / best < 1e-3, "prox {ours} vs oracle {best}");
}

#[test]
fn data_gradient_matches_central_differences() {
    let (gt, burst, model, motions) = textured_problem(10, 2);
    let problem = Problem::from_burst(&burst, &motions, &model).unwrap();
    let x: Vec<f64> = gt.grid().data().iter().enumerate().map(|(k, v)| v + 0.05 * ((k % 11) as f64 - 5.0) / 5.0).collect();
    let g = problem.data_gradient(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let delta = 1e-4;
    let mut checked = 0;
    while checked < 10 {
        let k = rng.random_range(0..x.len());
        if g[k].abs() < 1e-6 {
            continue;
        }
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[k] += delta;
        xm[k] -= delta;
        let fd = (problem.data_term(&xp) - problem.data_term(&xm)) / (2.0 * delta);
        assert!((fd - g[k]).abs() / g[k].abs() < 1e-3, "{k}: fd {fd} vs {}", g[k]);
        checked += 1;
    }
}

fn translation_error(a: &MotionParams, b: &MotionParams, centre: (f64, f64)) -> f64 {
    let (ax, ay) = a.apply(centre.0, centre.1);
    let (bx, by) = b.apply(centre.0, centre.1);
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

#[test]
fn p_step_keeps_true_motions() {
    let (gt, burst, model, motions) = textured_problem(24, 2);
    let problem = Problem::from_burst(&burst, &motions, &model).unwrap();
    let rep = p_step(&problem, gt.grid().data(), 3).unwrap();
    assert!(rep.singular.is_empty());
    for (a, b) in rep.motions.iter().zip(&motions) {
        assert!(translation_error(a, b, (24.0, 24.0)) < 1e-3);
    }
}

#[test]
fn p_step_reduces_a_half_pixel_error_fivefold() {
    let (gt, burst, model, motions) = textured_problem(24, 2);
    let perturbed: Vec<MotionParams> = motions
        .iter()
        .enumerate()
        .map(|(k, p)| if k == 0 { p.clone() } else { MotionParams::euclidean(p.tx() + 0.4, p.ty() - 0.3, p.theta()) })
        .collect();
    let problem = Problem::from_burst(&burst, &perturbed, &model).unwrap();
    let rep = p_step(&problem, gt.grid().data(), 3).unwrap();
    for k in 1..motions.len() {
        let before = translation_error(&perturbed[k], &motions[k], (24.0, 24.0));
        let after = translation_error(&rep.motions[k], &motions[k], (24.0, 24.0));
        assert!(after * 5.0 <= before, "frame {k}: {before} -> {after}");
    }
    assert_eq!(rep.motions[0], motions[0]);
}

#[test]
fn p_step_on_a_flat_image_is_singular() {
    let model = ObservationModel::new(BlurKernel::box_filter(2), 2, CfaPattern::Rggb, (8, 8)).unwrap();
    let flat = RgbImage::linear(PixelGrid::filled(16, 16, 3, 0.5)).unwrap();
    let motions = &small_motions()[..3];
    let burst = forward(&flat, motions, &model).unwrap();
    let problem = Problem::from_burst(&burst, motions, &model).unwrap();
    let rep = p_step(&problem, flat.grid().data(), 3).unwrap();
    assert_eq!(rep.singular, vec![1, 2]);
    assert_eq!(rep.motions, motions.to_vec());
}

#[test]
fn hqs_without_prior_recovers_a_determined_system() {
    let (p, y) = determined(8, 8, 6);
    let cfg = HqsConfig { lambda: 0.0, ..Default::default() };
    let est = hqs_solve_problem(p, &Prior::None, &cfg).unwrap();
    for (a, b) in est.x.grid().data().iter().zip(&y) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn pgd_without_prior_converges_on_a_determined_system() {
    let (p, y) = determined(8, 8, 7);
    // Start far from the answer so the iterations have work to do.
    let cfg = PgdConfig { iters: 200, lambda: 0.0, ..Default::default() };
    let est = pgd_solve_problem(p, &Prior::None, &cfg, Some(1.0)).unwrap();
    let d: f64 = est.x.grid().data().iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let n: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(d / n < 1e-3);
}

#[test]
fn hqs_energy_never_increases_within_a_mu() {
    let (_, burst, model, motions) = textured_problem(16, 2);
    let cfg = HqsConfig { lambda: 5e-3, ..Default::default() };
    let est = hqs_solve(&burst, &motions, &model, &Prior::tv(), &cfg).unwrap();
    let e = &est.diagnostics.energies;
    assert_eq!(e.len(), 3 * cfg.outer_iters);
    for w in e.windows(2) {
        if w[0].iteration == w[1].iteration {
            assert!(w[1].energy <= w[0].energy * (1.0 + 1e-6), "{:?} -> {:?}", w[0], w[1]);
        }
    }
    assert_eq!(est.diagnostics.cg.len(), cfg.outer_iters);
    assert_eq!(est.diagnostics.data_terms.len(), cfg.outer_iters);
}

#[test]
fn pgd_objective_never_increases() {
    let (_, burst, model, motions) = textured_problem(16, 2);
    let cfg = PgdConfig { iters: 40, lambda: 5.0, noise: Some(NoiseParams::challenge()), ..Default::default() };
    let est = pgd_solve(&burst, &motions, &model, &Prior::tv(), &cfg).unwrap();
    let f = &est.diagnostics.objective;
    assert_eq!(f.len(), cfg.iters + 1);
    for w in f.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn hqs_with_motion_refinement_is_deterministic() {
    let (_, burst, model, motions) = textured_problem(12, 2);
    let cfg = HqsConfig { motion_refine: true, outer_iters: 3, ..Default::default() };
    let a = hqs_solve(&burst, &motions, &model, &Prior::tv(), &cfg).unwrap();
    let b = hqs_solve(&burst, &motions, &model, &Prior::tv(), &cfg).unwrap();
    assert_eq!(a.diagnostics, b.diagnostics);
    assert_eq!(a.x, b.x);
    assert_eq!(a.motions, b.motions);
}

#[test]
fn noise_variance_estimate_tracks_read_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sigma: f64 = 0.02;
    let frame = PixelGrid::from_fn(64, 64, 1, |_, _, _| {
        let n: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        0.5 + sigma * n
    });
    let burst = Burst::new(vec![RawBayerImage::new(frame, CfaPattern::Rggb).unwrap()]).unwrap();
    let est = estimate_noise_variance(&burst);
    assert!((est.sqrt() - sigma).abs() / sigma < 0.1, "{}", est.sqrt());
}
