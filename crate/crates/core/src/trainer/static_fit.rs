use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::losses::{guidance_grads, image_loss, sample_views, GuidanceBatch};
use super::{check_finite, densify_and_prune, DensifyStats, IterationLog, StaticFitConfig, StaticLearningRates};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussians::GaussianCloud;
use crate::guidance::GuidanceProvider;
use crate::image::Image;
use crate::math::mix_seed;
use crate::rasterizer::RenderGradients;

/// Adam state for each parameter group of a cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGroups {
    pub positions: AdamState,
    pub rotations: AdamState,
    pub log_scales: AdamState,
    pub opacity_logits: AdamState,
    pub colors: AdamState,
}

impl StaticGroups {
    pub fn new(n: usize) -> Self {
        Self {
            positions: AdamState::new(3 * n),
            rotations: AdamState::new(4 * n),
            log_scales: AdamState::new(3 * n),
            opacity_logits: AdamState::new(n),
            colors: AdamState::new(3 * n),
        }
    }

    /// One Adam step on every group; colors are clamped to `[0, 1]` afterwards.
    pub fn step(
        &mut self,
        cloud: &mut GaussianCloud,
        grads: &RenderGradients,
        lr: &StaticLearningRates,
        position_lr: f64,
    ) -> Result<()> {
        let cfg = AdamConfig::default();
        adam_step(
            cloud.positions.as_flattened_mut(),
            grads.positions.as_flattened(),
            &mut self.positions,
            position_lr,
            &cfg,
        )?;
        adam_step(
            cloud.rotations.as_flattened_mut(),
            grads.rotations.as_flattened(),
            &mut self.rotations,
            lr.rotation,
            &cfg,
        )?;
        adam_step(
            cloud.log_scales.as_flattened_mut(),
            grads.log_scales.as_flattened(),
            &mut self.log_scales,
            lr.scale,
            &cfg,
        )?;
        adam_step(
            &mut cloud.opacity_logits,
            &grads.opacity_logits,
            &mut self.opacity_logits,
            lr.opacity,
            &cfg,
        )?;
        adam_step(
            cloud.colors.as_flattened_mut(),
            grads.colors.as_flattened(),
            &mut self.colors,
            lr.color,
            &cfg,
        )?;
        for c in cloud.colors.as_flattened_mut() {
            *c = c.clamp(0.0, 1.0);
        }
        Ok(())
    }
}

/// Fits a static cloud to `reference` (seen from `reference_camera`) plus
/// guidance on sampled views. Each iteration sums the reference MSE gradient
/// with the guidance gradients of `views_per_iteration` random views.
pub fn fit_static(
    reference: &Image,
    reference_camera: &Camera,
    provider: &dyn GuidanceProvider,
    config: &StaticFitConfig,
    log: &mut dyn FnMut(&IterationLog),
) -> Result<GaussianCloud> {
    config.validate()?;
    reference_camera.validate()?;
    if reference.width != reference_camera.width || reference.height != reference_camera.height {
        return Err(Error::dimension(
            "reference image",
            reference_camera.width * reference_camera.height,
            reference.width * reference.height,
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cloud = GaussianCloud::random_ball(config.initial_gaussians, config.init_radius, &mut rng);
    let initial = cloud.len();
    let schedule = config.schedule()?;
    let mut groups = StaticGroups::new(initial);
    let mut stats = DensifyStats::new(initial);
    let start = Instant::now();

    for it in 0..config.iterations {
        let t = schedule.noise_at(it)?;
        let (loss_ref, mut grads) =
            image_loss(&cloud, reference_camera, reference, config.background, Some(&mut stats))?;
        let mut view_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, it as u64, 0x57a7));
        let cameras = sample_views(
            &mut view_rng,
            config.views_per_iteration,
            config.render_size,
            config.elevation_range,
        );
        let batch = GuidanceBatch {
            cameras: &cameras,
            reference: Some(reference),
            t,
            time: 0.0,
            seed: mix_seed(config.seed, it as u64, 0x9d),
            background: config.background,
        };
        let (loss_guidance, sds) = guidance_grads(&cloud, provider, &batch, Some(&mut stats))?;
        grads.add_scaled(&sds, 1.0);
        check_finite("static", it, loss_ref + loss_guidance)?;

        let position_lr = config.lr.position_at(it, config.iterations);
        groups.step(&mut cloud, &grads, &config.lr, position_lr)?;

        let done = it + 1;
        if config.densify && done % config.densify_interval == 0 && done < config.iterations {
            let mut states = [
                (&mut groups.positions, 3),
                (&mut groups.rotations, 4),
                (&mut groups.log_scales, 3),
                (&mut groups.opacity_logits, 1),
                (&mut groups.colors, 3),
            ];
            densify_and_prune(&mut cloud, &stats, &mut states, config, initial, &mut rng);
            stats = DensifyStats::new(cloud.len());
        }
        log(&IterationLog {
            stage: "static",
            iteration: it,
            loss_ref,
            loss_guidance,
            noise: t,
            gaussians: cloud.len(),
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok(cloud)
}
