use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{DensifyStats, DrivingVideo};
use crate::camera::Camera;
use crate::error::Result;
use crate::gaussians::GaussianCloud;
use crate::guidance::{GuidanceProvider, GuidanceRequest, NoiseSchedule};
use crate::hexplane::{delta_upstream, deform, query_gradients, DeformDecoder, HexPlaneField};
use crate::image::Image;
use crate::math::{mix_seed, Vec3};
use crate::rasterizer::{render, render_backward, RenderGradients};

/// Per-pixel-per-channel mean squared error and its gradient with respect to `render`.
pub fn mse_gradient(render: &Image, target: &Image) -> Result<(f64, Image)> {
    render.check_shape(target, "loss target")?;
    let n = render.data.len() as f64;
    let mut loss = 0.0;
    let grad = render
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| {
            let d = a - b;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Image::from_data(render.width, render.height, grad)?))
}

/// A static cloud together with its deformation model.
#[derive(Clone, Copy, Debug)]
pub struct DeformableScene<'a> {
    pub cloud: &'a GaussianCloud,
    pub field: &'a HexPlaneField,
    pub decoder: &'a DeformDecoder,
}

impl DeformableScene<'_> {
    pub fn at(&self, tau: f64) -> Result<GaussianCloud> {
        deform(self.cloud, self.field, self.decoder, tau)
    }
}

/// Loss value and gradients for every trainable group of a deformable scene.
///
/// `cloud` holds gradients with respect to the static parameters, including
/// the path through the field query.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGradients {
    pub loss: f64,
    pub planes: Vec<f64>,
    pub decoder: Vec<f64>,
    pub cloud: RenderGradients,
}

impl SceneGradients {
    fn add_scaled(&mut self, other: &SceneGradients, scale: f64) {
        self.loss += scale * other.loss;
        for (a, b) in self.planes.iter_mut().zip(&other.planes) {
            *a += scale * b;
        }
        for (a, b) in self.decoder.iter_mut().zip(&other.decoder) {
            *a += scale * b;
        }
        self.cloud.add_scaled(&other.cloud, scale);
    }
}

/// Chains rasterizer gradients of the deformed cloud back into the field,
/// decoder and static cloud.
pub(crate) fn chain_deform(
    scene: &DeformableScene<'_>,
    tau: f64,
    loss: f64,
    mut grads: RenderGradients,
) -> Result<SceneGradients> {
    let q = query_gradients(scene.field, scene.decoder, scene.cloud, tau, &delta_upstream(&grads))?;
    for (g, p) in grads.positions.iter_mut().zip(&q.positions) {
        for k in 0..3 {
            g[k] += p[k];
        }
    }
    Ok(SceneGradients {
        loss,
        planes: q.planes,
        decoder: q.decoder,
        cloud: grads,
    })
}

/// MSE of one render against `target` and the rasterizer gradients.
pub(crate) fn image_loss(
    cloud: &GaussianCloud,
    camera: &Camera,
    target: &Image,
    background: Vec3,
    stats: Option<&mut DensifyStats>,
) -> Result<(f64, RenderGradients)> {
    let out = render(cloud, camera, background)?;
    let (loss, up) = mse_gradient(&out.rgb, target)?;
    let grads = render_backward(cloud, camera, background, &up)?;
    if let Some(stats) = stats {
        stats.record(&grads);
    }
    Ok((loss, grads))
}

/// Reference-view loss averaged over every frame of `video`.
pub fn loss_ref(scene: &DeformableScene<'_>, video: &DrivingVideo, background: Vec3) -> Result<SceneGradients> {
    let n = video.len();
    let mut total = SceneGradients {
        loss: 0.0,
        planes: vec![0.0; scene.field.params.len()],
        decoder: vec![0.0; scene.decoder.params.len()],
        cloud: RenderGradients::zeros(scene.cloud.len()),
    };
    for (k, frame) in video.frames.iter().enumerate() {
        let tau = video.time_of(k);
        let moved = scene.at(tau)?;
        let (loss, grads) = image_loss(&moved, &video.camera, frame, background, None)?;
        let g = chain_deform(scene, tau, loss, grads)?;
        total.add_scaled(&g, 1.0 / n as f64);
    }
    Ok(total)
}

/// Cameras with azimuth uniform in `[-180, 180)` and elevation uniform in `elevation`.
pub fn sample_views(rng: &mut ChaCha8Rng, count: usize, size: usize, elevation: [f64; 2]) -> Vec<Camera> {
    (0..count)
        .map(|_| {
            let az = rng.random_range(-180.0..180.0);
            let el = if elevation[0] < elevation[1] {
                rng.random_range(elevation[0]..elevation[1])
            } else {
                elevation[0]
            };
            Camera::orbit(az, el, size)
        })
        .collect()
}

/// Everything that identifies one batch of guidance views.
pub(crate) struct GuidanceBatch<'a> {
    pub cameras: &'a [Camera],
    pub reference: Option<&'a Image>,
    pub t: f64,
    pub time: f64,
    pub seed: u64,
    pub background: Vec3,
}

/// Sums rasterizer gradients of the provider's gradient images over the
/// views. The gradient image `g` is used as `2g / (3HW)`, so an oracle at
/// weight 1 matches the per-view MSE gradient. Returns the mean of `g²`.
pub(crate) fn guidance_grads(
    cloud: &GaussianCloud,
    provider: &dyn GuidanceProvider,
    batch: &GuidanceBatch<'_>,
    mut stats: Option<&mut DensifyStats>,
) -> Result<(f64, RenderGradients)> {
    let mut total = RenderGradients::zeros(cloud.len());
    let mut residual = 0.0;
    for (v, cam) in batch.cameras.iter().enumerate() {
        let out = render(cloud, cam, batch.background)?;
        let request = GuidanceRequest {
            image: &out.rgb,
            camera: cam,
            reference: batch.reference,
            t: batch.t,
            time: batch.time,
            seed: mix_seed(batch.seed, v as u64, 0x5d5),
        };
        let mut g = provider.gradient(&request)?;
        out.rgb.check_shape(&g, "guidance gradient")?;
        let n = g.data.len() as f64;
        residual += g.data.iter().map(|x| x * x).sum::<f64>() / n;
        for x in g.data.iter_mut() {
            *x *= 2.0 / n;
        }
        let grads = render_backward(cloud, cam, batch.background, &g)?;
        if let Some(stats) = stats.as_deref_mut() {
            stats.record(&grads);
        }
        total.add_scaled(&grads, 1.0);
    }
    let views = batch.cameras.len().max(1) as f64;
    Ok((residual / views, total))
}

/// Options for [`sds_step`].
#[derive(Clone, Copy, Debug)]
pub struct SdsOptions {
    pub views: usize,
    pub render_size: usize,
    pub elevation_range: [f64; 2],
    pub background: Vec3,
    pub seed: u64,
}

/// Guidance gradients at time `tau` for `options.views` sampled cameras at
/// the noise level scheduled for `iteration`.
pub fn sds_step(
    scene: &DeformableScene<'_>,
    tau: f64,
    provider: &dyn GuidanceProvider,
    schedule: &NoiseSchedule,
    iteration: usize,
    options: &SdsOptions,
) -> Result<SceneGradients> {
    let t = schedule.noise_at(iteration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(options.seed, iteration as u64, 0x5d5));
    let cameras = sample_views(&mut rng, options.views, options.render_size, options.elevation_range);
    let moved = scene.at(tau)?;
    let batch = GuidanceBatch {
        cameras: &cameras,
        reference: None,
        t,
        time: tau,
        seed: mix_seed(options.seed, iteration as u64, 1),
        background: options.background,
    };
    let (residual, grads) = guidance_grads(&moved, provider, &batch, None)?;
    chain_deform(scene, tau, residual, grads)
}
