//! Texture refinement against a refined orbit video.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::{render_mesh, render_mesh_backward};
use super::sequence::TexturedMeshSequence;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::guidance::{add_noise, GroundTruth, NoiseSchedule, RefineRequest, VideoRefiner};
use crate::image::Image;
use crate::math::{mix_seed, Vec3};
use crate::trainer::adam::{adam_step, AdamConfig, AdamState};

/// Cameras at elevation 0 advancing by a constant azimuth step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrbitTrajectory {
    pub frames: usize,
    pub start_azimuth: f64,
    pub step: f64,
    pub size: usize,
}

impl OrbitTrajectory {
    /// A full turn over `frames` frames from a random start.
    pub fn random<R: Rng + ?Sized>(frames: usize, size: usize, rng: &mut R) -> Self {
        Self {
            frames,
            start_azimuth: rng.random_range(-180.0..180.0),
            step: 360.0 / frames.max(1) as f64,
            size,
        }
    }

    pub fn cameras(&self) -> Vec<Camera> {
        (0..self.frames)
            .map(|k| {
                let az = self.start_azimuth + self.step * k as f64;
                Camera::orbit((az + 180.0).rem_euclid(360.0) - 180.0, 0.0, self.size)
            })
            .collect()
    }
}

/// A textured mesh sequence as a renderable scene; a time picks the frame
/// whose time is nearest.
#[derive(Clone, Debug)]
pub struct MeshScene {
    pub sequence: TexturedMeshSequence,
    pub background: Vec3,
}

impl MeshScene {
    pub fn frame_at(&self, time: f64) -> Result<usize> {
        let frames = &self.sequence.frames;
        (0..frames.len())
            .min_by(|&a, &b| {
                let da = (frames[a].time - time).abs();
                let db = (frames[b].time - time).abs();
                da.total_cmp(&db)
            })
            .ok_or_else(|| Error::Coverage("mesh sequence has no frames".into()))
    }

    pub fn render_frame(&self, frame: usize, camera: &Camera) -> Result<Image> {
        let f = &self.sequence.frames[frame];
        Ok(render_mesh(&f.mesh, &f.uv, self.sequence.texture_of(frame), camera, self.background)?.rgb)
    }
}

impl GroundTruth for MeshScene {
    fn render(&self, camera: &Camera, time: f64) -> Result<Image> {
        self.render_frame(self.frame_at(time)?, camera)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineMode {
    /// All frames rendered along one orbit and refined as one video;
    /// shared textures stay shared.
    #[default]
    Joint,
    /// Every frame refined on its own, from its own random view, with
    /// untied textures.
    PerFrame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineOptions {
    pub iterations: usize,
    pub noise: f64,
    pub lr: f64,
    pub render_size: usize,
    pub background: Vec3,
    pub mode: RefineMode,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            iterations: 50,
            noise: NoiseSchedule::REFINEMENT,
            lr: 0.01,
            render_size: 256,
            background: [1.0; 3],
            mode: RefineMode::Joint,
            seed: 0,
        }
    }
}

impl RefineOptions {
    pub fn validate(&self) -> Result<()> {
        NoiseSchedule::constant(self.noise, self.iterations)?;
        if self.render_size == 0 {
            return Err(Error::Config("refine render_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("refine lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefineReport {
    /// Mean squared error between renders and refined frames, per iteration.
    pub losses: Vec<f64>,
}

/// Renders, noises, refines and fits textures for `options.iterations`
/// steps. The loss is the mean squared difference between the renders and
/// the refiner's frames; gradients reach texels through bilinear lookups
/// only, so geometry stays fixed.
pub fn refine_textures(
    sequence: &mut TexturedMeshSequence,
    refiner: &dyn VideoRefiner,
    input: Option<&Image>,
    options: &RefineOptions,
) -> Result<RefineReport> {
    options.validate()?;
    if options.mode == RefineMode::PerFrame {
        sequence.untie_textures();
    }
    let frames = sequence.frames.len();
    let mut report = RefineReport::default();
    if frames == 0 {
        return Ok(report);
    }
    let times: Vec<f64> = sequence.frames.iter().map(|f| f.time).collect();
    let mut states: Vec<AdamState> = sequence.textures.iter().map(|t| AdamState::new(t.data.len())).collect();
    let adam = AdamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let size = options.render_size;

    for it in 0..options.iterations {
        let cameras: Vec<Camera> = match options.mode {
            RefineMode::Joint => OrbitTrajectory::random(frames, size, &mut rng).cameras(),
            RefineMode::PerFrame => (0..frames)
                .map(|_| OrbitTrajectory::random(1, size, &mut rng).cameras()[0])
                .collect(),
        };
        let renders = (0..frames)
            .map(|k| {
                let f = &sequence.frames[k];
                render_mesh(&f.mesh, &f.uv, sequence.texture_of(k), &cameras[k], options.background)
            })
            .collect::<Result<Vec<_>>>()?;
        let clean: Vec<Image> = renders.iter().map(|r| r.rgb.clone()).collect();
        let seed = mix_seed(options.seed, it as u64, 0x7266);
        let targets = match options.mode {
            RefineMode::Joint => {
                let noisy = add_noise(&clean, options.noise, seed);
                refiner.refine(&RefineRequest {
                    clean: &clean,
                    noisy: &noisy,
                    cameras: &cameras,
                    times: &times,
                    input,
                    t: options.noise,
                    seed,
                })?
            }
            RefineMode::PerFrame => {
                let mut out = Vec::with_capacity(frames);
                for k in 0..frames {
                    let frame_seed = mix_seed(seed, k as u64, 0x6932);
                    let one = std::slice::from_ref(&clean[k]);
                    let noisy = add_noise(one, options.noise, frame_seed);
                    let mut got = refiner.refine(&RefineRequest {
                        clean: one,
                        noisy: &noisy,
                        cameras: std::slice::from_ref(&cameras[k]),
                        times: std::slice::from_ref(&times[k]),
                        input,
                        t: options.noise,
                        seed: frame_seed,
                    })?;
                    if got.len() != 1 {
                        return Err(Error::Provider(format!("refiner returned {} frames for 1", got.len())));
                    }
                    out.push(got.remove(0));
                }
                out
            }
        };
        if targets.len() != frames {
            return Err(Error::Provider(format!(
                "refiner returned {} frames for {}",
                targets.len(),
                frames
            )));
        }

        let n = (frames * size * size * 3) as f64;
        let mut loss = 0.0;
        let mut grads: Vec<Image> = sequence.textures.iter().map(|t| Image::new(t.width, t.height)).collect();
        for k in 0..frames {
            clean[k].check_shape(&targets[k], "refined frame")?;
            let mut upstream = clean[k].clone();
            for (u, t) in upstream.data.iter_mut().zip(&targets[k].data) {
                let d = *u - t;
                loss += d * d / n;
                *u = 2.0 * d / n;
            }
            let g = render_mesh_backward(&renders[k], sequence.frames[k].uv.texture_size, &upstream)?;
            let slot = &mut grads[sequence.frames[k].texture];
            for (a, b) in slot.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("refinement loss is {loss} at iteration {it}")));
        }
        report.losses.push(loss);
        for ((texture, grad), state) in sequence.textures.iter_mut().zip(&grads).zip(&mut states) {
            adam_step(&mut texture.data, &grad.data, state, options.lr, &adam)?;
            for v in texture.data.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(report)
}

/// Mean over texels and channels of the variance across frames of each
/// frame's texture. Zero when all frames share one texture.
pub fn texel_variance_across_frames(sequence: &TexturedMeshSequence) -> Result<f64> {
    let frames = sequence.frames.len();
    if frames < 2 {
        return Ok(0.0);
    }
    let first = sequence.texture_of(0);
    for k in 1..frames {
        first.check_shape(sequence.texture_of(k), "frame texture")?;
    }
    let len = first.data.len();
    let mut total = 0.0;
    for i in 0..len {
        let mean = (0..frames).map(|k| sequence.texture_of(k).data[i]).sum::<f64>() / frames as f64;
        let var = (0..frames)
            .map(|k| (sequence.texture_of(k).data[i] - mean).powi(2))
            .sum::<f64>()
            / frames as f64;
        total += var;
    }
    Ok(total / len as f64)
}
