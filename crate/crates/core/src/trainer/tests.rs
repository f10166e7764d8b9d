use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gaussians::GaussianCloud;
use crate::guidance::{oracle_guidance, DeformedScene, StaticScene, ZeroGuidance};
use crate::hexplane::{DeformDecoder, Head, HexPlaneField};
use crate::image::{mse, psnr};
use crate::math::Vec3;
use crate::rasterizer::render;

const WHITE: Vec3 = [1.0; 3];

fn small_scene(seed: u64) -> (GaussianCloud, HexPlaneField, DeformDecoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = GaussianCloud::random_test_scene(6, &mut rng);
    let field = HexPlaneField::new(4, 3, 4, &mut rng);
    let mut decoder = DeformDecoder::new(4, 6, 2, &mut rng);
    // Nonzero heads so every group carries gradient.
    let heads = decoder.head_params();
    for v in &mut decoder.params[heads] {
        *v = rand::Rng::random_range(&mut rng, -0.05..0.05);
    }
    (cloud, field, decoder)
}

fn video_of(cloud: &GaussianCloud, field: &HexPlaneField, decoder: &DeformDecoder, frames: usize) -> DrivingVideo {
    let cam = crate::camera::Camera::orbit(10.0, 5.0, 24);
    let scene = DeformedScene {
        cloud: cloud.clone(),
        field: field.clone(),
        decoder: decoder.clone(),
        background: WHITE,
    };
    let images = (0..frames)
        .map(|k| crate::guidance::GroundTruth::render(&scene, &cam, k as f64 / (frames - 1) as f64).unwrap())
        .collect();
    DrivingVideo::new(images, cam).unwrap()
}

#[test]
fn mse_gradient_matches_definition() {
    let a = Image::from_data(2, 1, vec![0.2, 0.4, 0.6, 1.0, 0.0, 0.5]).unwrap();
    let b = Image::from_data(2, 1, vec![0.1, 0.4, 0.9, 0.0, 0.0, 0.5]).unwrap();
    let (loss, grad) = mse_gradient(&a, &b).unwrap();
    assert!((loss - (0.01 + 0.09 + 1.0) / 6.0).abs() < 1e-15);
    assert!((grad.data[0] - 2.0 * 0.1 / 6.0).abs() < 1e-15);
    assert!((grad.data[2] + 2.0 * 0.3 / 6.0).abs() < 1e-15);
    assert_eq!(grad.data[1], 0.0);
}

#[test]
fn loss_ref_vanishes_on_its_own_video() {
    let (cloud, field, decoder) = small_scene(1);
    let video = video_of(&cloud, &field, &decoder, 4);
    let scene = DeformableScene {
        cloud: &cloud,
        field: &field,
        decoder: &decoder,
    };
    let g = loss_ref(&scene, &video, WHITE).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.planes.iter().chain(&g.decoder).all(|&v| v == 0.0));
}

#[test]
fn loss_ref_is_one_for_white_against_black() {
    let empty = GaussianCloud::with_capacity(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let field = HexPlaneField::new(4, 3, 4, &mut rng);
    let decoder = DeformDecoder::new(4, 4, 1, &mut rng);
    let cam = crate::camera::Camera::orbit(0.0, 0.0, 8);
    let video = DrivingVideo::new(vec![Image::new(8, 8); 3], cam).unwrap();
    let scene = DeformableScene {
        cloud: &empty,
        field: &field,
        decoder: &decoder,
    };
    assert_eq!(loss_ref(&scene, &video, WHITE).unwrap().loss, 1.0);
}

fn loss_at(cloud: &GaussianCloud, field: &HexPlaneField, decoder: &DeformDecoder, video: &DrivingVideo) -> f64 {
    let scene = DeformableScene { cloud, field, decoder };
    loss_ref(&scene, video, WHITE).unwrap().loss
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-5 + 1e-3 * numeric.abs().max(analytic.abs())
}

#[test]
fn loss_ref_gradients_match_finite_differences() {
    let (cloud, field, decoder) = small_scene(2);
    let (_, field_t, mut decoder_t) = small_scene(3);
    // Target: same cloud moved by a different deformation.
    decoder_t.head_bias_mut(Head::Position)[0] += 0.05;
    let video = video_of(&cloud, &field_t, &decoder_t, 3);
    let scene = DeformableScene {
        cloud: &cloud,
        field: &field,
        decoder: &decoder,
    };
    let g = loss_ref(&scene, &video, WHITE).unwrap();
    assert!(g.loss > 0.0);
    let h = 1e-4;
    let mut checked = 0;

    let mut order: Vec<usize> = (0..g.planes.len()).collect();
    order.sort_by(|&a, &b| g.planes[b].abs().total_cmp(&g.planes[a].abs()));
    for &i in order.iter().take(6) {
        let mut f = field.clone();
        f.params[i] += h;
        let up = loss_at(&cloud, &f, &decoder, &video);
        f.params[i] -= 2.0 * h;
        let down = loss_at(&cloud, &f, &decoder, &video);
        let fd = (up - down) / (2.0 * h);
        assert!(close(g.planes[i], fd), "plane {i}: {} vs {fd}", g.planes[i]);
        checked += 1;
    }
    let mut order: Vec<usize> = (0..g.decoder.len()).collect();
    order.sort_by(|&a, &b| g.decoder[b].abs().total_cmp(&g.decoder[a].abs()));
    for &i in order.iter().take(6) {
        let mut d = decoder.clone();
        d.params[i] += h;
        let up = loss_at(&cloud, &field, &d, &video);
        d.params[i] -= 2.0 * h;
        let down = loss_at(&cloud, &field, &d, &video);
        let fd = (up - down) / (2.0 * h);
        assert!(close(g.decoder[i], fd), "decoder {i}: {} vs {fd}", g.decoder[i]);
        checked += 1;
    }
    for i in 0..cloud.len() {
        for k in 0..3 {
            let mut c = cloud.clone();
            c.positions[i][k] += h;
            let up = loss_at(&c, &field, &decoder, &video);
            c.positions[i][k] -= 2.0 * h;
            let down = loss_at(&c, &field, &decoder, &video);
            let fd = (up - down) / (2.0 * h);
            assert!(close(g.cloud.positions[i][k], fd), "position {i},{k}: {} vs {fd}", g.cloud.positions[i][k]);
            checked += 1;
        }
    }
    assert_eq!(checked, 12 + 3 * cloud.len());
}

fn sds_options() -> SdsOptions {
    SdsOptions {
        views: 4,
        render_size: 24,
        elevation_range: [-30.0, 30.0],
        background: WHITE,
        seed: 5,
    }
}

#[test]
fn sds_with_zero_provider_is_zero() {
    let (cloud, field, decoder) = small_scene(4);
    let scene = DeformableScene {
        cloud: &cloud,
        field: &field,
        decoder: &decoder,
    };
    let schedule = crate::guidance::NoiseSchedule::dynamic_stage(10);
    let g = sds_step(&scene, 0.3, &ZeroGuidance, &schedule, 0, &sds_options()).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.planes.iter().chain(&g.decoder).all(|&v| v == 0.0));
    assert_eq!(g.cloud.max_abs(), 0.0);
}

#[test]
fn sds_step_is_a_descent_direction() {
    let (cloud, field, decoder) = small_scene(5);
    let mut target_decoder = decoder.clone();
    target_decoder.head_bias_mut(Head::Position)[1] += 0.08;
    let provider = oracle_guidance(DeformedScene {
        cloud: cloud.clone(),
        field: field.clone(),
        decoder: target_decoder,
        background: WHITE,
    });
    let schedule = crate::guidance::NoiseSchedule::dynamic_stage(10);
    let residual = |d: &DeformDecoder| {
        let scene = DeformableScene {
            cloud: &cloud,
            field: &field,
            decoder: d,
        };
        sds_step(&scene, 0.4, &provider, &schedule, 3, &sds_options()).unwrap()
    };
    let g = residual(&decoder);
    assert!(g.loss > 0.0);
    let norm2: f64 = g.decoder.iter().map(|v| v * v).sum();
    assert!(norm2 > 0.0);
    let mut stepped = decoder.clone();
    let eta = 1e-3 / norm2.sqrt();
    for (p, d) in stepped.params.iter_mut().zip(&g.decoder) {
        *p -= eta * d;
    }
    assert!(residual(&stepped).loss < g.loss);
}

fn red_target() -> GaussianCloud {
    let mut target = GaussianCloud::with_capacity(1);
    target.push([0.0; 3], [1.0, 0.0, 0.0, 0.0], [0.2f64.ln(); 3], 10.0, [1.0, 0.0, 0.0]);
    target
}

#[test]
fn zero_iterations_return_the_initial_cloud() {
    let target = red_target();
    let cam = crate::camera::Camera::orbit(0.0, 0.0, 16);
    let reference = render(&target, &cam, WHITE).unwrap().rgb;
    let config = StaticFitConfig {
        iterations: 0,
        initial_gaussians: 50,
        seed: 9,
        ..StaticFitConfig::default()
    };
    let mut logged = 0;
    let cloud = fit_static(&reference, &cam, &ZeroGuidance, &config, &mut |_| logged += 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    assert_eq!(cloud, GaussianCloud::random_ball(50, config.init_radius, &mut rng));
    assert_eq!(logged, 0);
}

#[test]
fn static_fit_recovers_a_red_gaussian() {
    let target = red_target();
    let cam = crate::camera::Camera::orbit(0.0, 0.0, 64);
    let reference = render(&target, &cam, WHITE).unwrap().rgb;
    let provider = oracle_guidance(StaticScene {
        cloud: target.clone(),
        background: WHITE,
    });
    let config = StaticFitConfig {
        iterations: 200,
        initial_gaussians: 500,
        render_size: 64,
        seed: 1,
        ..StaticFitConfig::default()
    };
    let mut noise = Vec::new();
    let fit = fit_static(&reference, &cam, &provider, &config, &mut |l| noise.push(l.noise)).unwrap();
    assert_eq!(noise[0], 0.98);
    assert_eq!(*noise.last().unwrap(), 0.02);
    for az in [45.0, 135.0, -100.0] {
        let view = crate::camera::Camera::orbit(az, 20.0, 64);
        let p = psnr(&render(&fit, &view, WHITE).unwrap().rgb, &render(&target, &view, WHITE).unwrap().rgb).unwrap();
        assert!(p >= 35.0, "held-out PSNR {p} at azimuth {az}");
    }
}

#[test]
fn densification_changes_the_cloud_only_when_enabled() {
    let target = red_target();
    let cam = crate::camera::Camera::orbit(0.0, 0.0, 32);
    let reference = render(&target, &cam, WHITE).unwrap().rgb;
    let provider = oracle_guidance(StaticScene {
        cloud: target,
        background: WHITE,
    });
    let base = StaticFitConfig {
        iterations: 21,
        initial_gaussians: 100,
        densify_interval: 10,
        densify_grad_threshold: 1e-4,
        render_size: 32,
        views_per_iteration: 4,
        seed: 2,
        ..StaticFitConfig::default()
    };
    let mut counts = Vec::new();
    fit_static(&reference, &cam, &provider, &base, &mut |l| counts.push(l.gaussians)).unwrap();
    assert!(counts[9] > 100, "{counts:?}");
    assert!(counts[20] >= counts[9]);
    let off = StaticFitConfig { densify: false, ..base };
    let mut counts = Vec::new();
    fit_static(&reference, &cam, &provider, &off, &mut |l| counts.push(l.gaussians)).unwrap();
    assert!(counts.iter().all(|&n| n == 100));
}

#[test]
fn densify_respects_the_cap_and_the_prune_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cloud = GaussianCloud::random_ball(20, 0.5, &mut rng);
    for i in 0..20 {
        cloud.opacity_logits[i] = crate::math::logit(0.001);
    }
    let mut stats = DensifyStats::new(20);
    stats.grad_sum = vec![1.0; 20];
    stats.views = vec![1; 20];
    let config = StaticFitConfig {
        initial_gaussians: 20,
        max_gaussians: 25,
        ..StaticFitConfig::default()
    };
    let mut state = adam::AdamState::new(3 * 20);
    let report = densify_and_prune(&mut cloud, &stats, &mut [(&mut state, 3)], &config, 20, &mut rng);
    assert_eq!((report.cloned, report.split), (5, 0));
    // Only the originals are pruned; the floor of 2 is not reached.
    assert_eq!(report.pruned, 20);
    assert_eq!(cloud.len(), 5);
    assert_eq!(state.len(), 3 * 5);
}

fn dynamic_config() -> DynamicFitConfig {
    DynamicFitConfig {
        iterations: 6,
        views_per_timestep: 2,
        spatial_res: 8,
        temporal_res: 4,
        features: 8,
        decoder_hidden: 16,
        decoder_layers: 1,
        render_size: 24,
        seed: 4,
        ..DynamicFitConfig::default()
    }
}

#[test]
fn dynamic_fit_logs_the_schedule_and_keeps_the_frozen_cloud() {
    let (cloud, _, _) = small_scene(6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let field = HexPlaneField::new(4, 3, 4, &mut rng);
    let mut decoder = DeformDecoder::new(4, 6, 1, &mut rng);
    decoder.head_bias_mut(Head::Position)[0] = 0.05;
    let video = video_of(&cloud, &field, &decoder, 4);
    let provider = ZeroGuidance;
    let mut logs = Vec::new();
    let fit = fit_dynamic(&cloud, &video, &provider, &dynamic_config(), &mut |l| logs.push(l.clone())).unwrap();
    assert_eq!(fit.cloud, cloud);
    assert_eq!(logs[0].noise, 0.5);
    assert_eq!(logs.last().unwrap().noise, 0.02);

    // The first step sees the undeformed cloud, so its loss is the static loss on that frame.
    let mut it_rng = ChaCha8Rng::seed_from_u64(crate::math::mix_seed(4, 0, 0xd1));
    let frame = rand::Rng::random_range(&mut it_rng, 0..video.len());
    let static_loss = mse(&render(&cloud, &video.camera, WHITE).unwrap().rgb, &video.frames[frame]).unwrap();
    assert!((logs[0].loss_ref - static_loss).abs() < 1e-15);
}

#[test]
fn dynamic_fit_of_a_still_video_stays_still() {
    let (cloud, _, _) = small_scene(7);
    let cam = crate::camera::Camera::orbit(10.0, 5.0, 24);
    let frame = render(&cloud, &cam, WHITE).unwrap().rgb;
    let video = DrivingVideo::new(vec![frame; 4], cam).unwrap();
    let provider = oracle_guidance(StaticScene {
        cloud: cloud.clone(),
        background: WHITE,
    });
    let mut logs = Vec::new();
    let fit = fit_dynamic(&cloud, &video, &provider, &dynamic_config(), &mut |l| logs.push(l.clone())).unwrap();
    assert!(logs.iter().all(|l| l.loss_ref == 0.0 && l.loss_guidance == 0.0));
    for tau in [0.0, 0.4, 1.0] {
        let delta = crate::hexplane::predict_delta(&cloud, &fit.field, &fit.decoder, tau).unwrap();
        assert!(delta.max_abs_position() < 1e-3);
    }
}

#[test]
fn unfrozen_dynamic_fit_moves_the_cloud() {
    let (cloud, field, decoder) = small_scene(8);
    let video = video_of(&cloud, &field, &decoder, 3);
    let mut shifted = cloud.clone();
    shifted.positions[0][0] += 0.1;
    let config = DynamicFitConfig {
        freeze_static: false,
        ..dynamic_config()
    };
    let fit = fit_dynamic(&shifted, &video, &ZeroGuidance, &config, &mut |_| {}).unwrap();
    assert_ne!(fit.cloud.positions, shifted.positions);
}

#[test]
fn invalid_configs_are_rejected() {
    let cam = crate::camera::Camera::orbit(0.0, 0.0, 8);
    let reference = Image::new(8, 8);
    let bad = StaticFitConfig {
        t_start: 1.5,
        ..StaticFitConfig::default()
    };
    let err = fit_static(&reference, &cam, &ZeroGuidance, &bad, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let bad = DynamicFitConfig {
        spatial_res: 1,
        ..DynamicFitConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn nan_reference_is_a_numerical_error() {
    let cam = crate::camera::Camera::orbit(0.0, 0.0, 8);
    let mut reference = Image::filled(8, 8, [0.5; 3]);
    reference.data[5] = f64::NAN;
    let config = StaticFitConfig {
        iterations: 2,
        initial_gaussians: 20,
        render_size: 8,
        views_per_iteration: 1,
        ..StaticFitConfig::default()
    };
    let err = fit_static(&reference, &cam, &ZeroGuidance, &config, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
}

#[test]
fn sds_at_the_target_is_zero() {
    let (cloud, field, decoder) = small_scene(9);
    let provider = oracle_guidance(DeformedScene {
        cloud: cloud.clone(),
        field: field.clone(),
        decoder: decoder.clone(),
        background: WHITE,
    });
    let scene = DeformableScene {
        cloud: &cloud,
        field: &field,
        decoder: &decoder,
    };
    let schedule = crate::guidance::NoiseSchedule::dynamic_stage(10);
    let g = sds_step(&scene, 0.6, &provider, &schedule, 2, &sds_options()).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.planes.iter().chain(&g.decoder).all(|&v| v == 0.0));
}

/// A rod of small dark Gaussians along x.
fn thin_rod() -> GaussianCloud {
    let mut rod = GaussianCloud::with_capacity(16);
    for k in 0..16 {
        let x = -0.6 + 1.2 * k as f64 / 15.0;
        rod.push([x, 0.1 * x, 0.0], [1.0, 0.0, 0.0, 0.0], [0.03f64.ln(), 0.012f64.ln(), 0.012f64.ln()], 4.0, [0.1, 0.2, 0.6]);
    }
    rod
}

#[test]
fn densification_lowers_the_loss_on_a_thin_structure() {
    let target = thin_rod();
    let cam = crate::camera::Camera::orbit(0.0, 0.0, 48);
    let reference = render(&target, &cam, WHITE).unwrap().rgb;
    let provider = oracle_guidance(StaticScene {
        cloud: target,
        background: WHITE,
    });
    let on = StaticFitConfig {
        iterations: 150,
        initial_gaussians: 20,
        densify_interval: 25,
        densify_grad_threshold: 1e-3,
        render_size: 48,
        views_per_iteration: 4,
        seed: 6,
        ..StaticFitConfig::default()
    };
    let off = StaticFitConfig { densify: false, ..on.clone() };
    let run = |config: &StaticFitConfig| {
        let mut last = (0.0, 0);
        fit_static(&reference, &cam, &provider, config, &mut |l| last = (l.loss_ref, l.gaussians)).unwrap();
        last
    };
    let (loss_on, count_on) = run(&on);
    let (loss_off, count_off) = run(&off);
    assert_eq!(count_off, 20);
    assert!(count_on > 20);
    assert!(loss_on < loss_off, "densified {loss_on:.3e} ({count_on}) vs fixed {loss_off:.3e}");
}
