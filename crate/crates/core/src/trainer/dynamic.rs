use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::losses::{chain_deform, guidance_grads, image_loss, sample_views, DeformableScene, GuidanceBatch};
use super::{check_finite, DrivingVideo, DynamicFitConfig, IterationLog, StaticGroups};
use crate::error::Result;
use crate::gaussians::GaussianCloud;
use crate::guidance::GuidanceProvider;
use crate::hexplane::{deform, DeformDecoder, HexPlaneField};
use crate::math::mix_seed;

/// Result of the dynamic stage. `cloud` equals the input cloud bit for bit
/// when the static stage is frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicFit {
    pub field: HexPlaneField,
    pub decoder: DeformDecoder,
    pub cloud: GaussianCloud,
}

/// Trains a HexPlane field and decoder so that the deformed cloud matches
/// `video` at the reference camera, with guidance on sampled views.
///
/// Each iteration picks one frame uniformly, sums the reference MSE gradient
/// with the guidance gradients of `views_per_timestep` random views at that
/// frame's time, and takes one Adam step.
pub fn fit_dynamic(
    cloud: &GaussianCloud,
    video: &DrivingVideo,
    provider: &dyn GuidanceProvider,
    config: &DynamicFitConfig,
    log: &mut dyn FnMut(&IterationLog),
) -> Result<DynamicFit> {
    config.validate()?;
    cloud.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut field = HexPlaneField::new(config.spatial_res, config.temporal_res, config.features, &mut rng);
    let mut decoder = DeformDecoder::new(config.features, config.decoder_hidden, config.decoder_layers, &mut rng);
    let mut cloud = cloud.clone();
    let schedule = config.schedule()?;
    let adam = AdamConfig::default();
    let mut plane_state = AdamState::new(field.params.len());
    let mut decoder_state = AdamState::new(decoder.params.len());
    let mut static_groups = StaticGroups::new(cloud.len());
    let start = Instant::now();

    for it in 0..config.iterations {
        let t = schedule.noise_at(it)?;
        let mut it_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, it as u64, 0xd1));
        let frame = it_rng.random_range(0..video.len());
        let tau = video.time_of(frame);
        let moved = deform(&cloud, &field, &decoder, tau)?;

        let (loss_ref, mut grads) =
            image_loss(&moved, &video.camera, &video.frames[frame], config.background, None)?;
        let cameras = sample_views(&mut it_rng, config.views_per_timestep, config.render_size, config.elevation_range);
        let batch = GuidanceBatch {
            cameras: &cameras,
            reference: Some(&video.frames[frame]),
            t,
            time: tau,
            seed: mix_seed(config.seed, it as u64, 0x9d),
            background: config.background,
        };
        let (loss_guidance, sds) = guidance_grads(&moved, provider, &batch, None)?;
        grads.add_scaled(&sds, 1.0);
        check_finite("dynamic", it, loss_ref + loss_guidance)?;

        let scene = DeformableScene {
            cloud: &cloud,
            field: &field,
            decoder: &decoder,
        };
        let g = chain_deform(&scene, tau, loss_ref, grads)?;
        adam_step(&mut field.params, &g.planes, &mut plane_state, config.grid_lr, &adam)?;
        adam_step(&mut decoder.params, &g.decoder, &mut decoder_state, config.mlp_lr, &adam)?;
        if !config.freeze_static {
            let lr = config.static_lr.position_at(it, config.iterations);
            static_groups.step(&mut cloud, &g.cloud, &config.static_lr, lr)?;
        }
        log(&IterationLog {
            stage: "dynamic",
            iteration: it,
            loss_ref,
            loss_guidance,
            noise: t,
            gaussians: cloud.len(),
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok(DynamicFit { field, decoder, cloud })
}
