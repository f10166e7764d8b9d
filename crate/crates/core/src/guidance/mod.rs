//! Noise schedules and the pluggable providers standing in for the
//! novel-view diffusion prior and the video refiner.

mod external;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use external::ExternalProvider;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussians::GaussianCloud;
use crate::hexplane::{deform, DeformDecoder, HexPlaneField};
use crate::image::Image;
use crate::math::{mix_seed, Vec3};
use crate::rasterizer::render;

/// Linear decay of the maximum noise level over an optimization run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub t_start: f64,
    pub t_end: f64,
    pub total_iterations: usize,
}

impl NoiseSchedule {
    pub const STATIC: (f64, f64) = (0.98, 0.02);
    pub const DYNAMIC: (f64, f64) = (0.5, 0.02);
    pub const REFINEMENT: f64 = 0.7;

    pub fn new(t_start: f64, t_end: f64, total_iterations: usize) -> Result<Self> {
        let schedule = Self {
            t_start,
            t_end,
            total_iterations,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn constant(t: f64, total_iterations: usize) -> Result<Self> {
        Self::new(t, t, total_iterations)
    }

    pub fn static_stage(total_iterations: usize) -> Self {
        Self::new(Self::STATIC.0, Self::STATIC.1, total_iterations).expect("valid defaults")
    }

    pub fn dynamic_stage(total_iterations: usize) -> Self {
        Self::new(Self::DYNAMIC.0, Self::DYNAMIC.1, total_iterations).expect("valid defaults")
    }

    pub fn refinement(total_iterations: usize) -> Self {
        Self::constant(Self::REFINEMENT, total_iterations).expect("valid defaults")
    }

    pub fn validate(&self) -> Result<()> {
        // Zero is allowed so that refinement can run noise-free.
        for (what, v) in [("t_start", self.t_start), ("t_end", self.t_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Range {
                    what,
                    value: v,
                    min: 0.0,
                    max: 1.0,
                });
            }
        }
        Ok(())
    }

    /// Noise level at `iteration`; exactly `t_start` at 0 and `t_end` at
    /// `total_iterations`.
    pub fn noise_at(&self, iteration: usize) -> Result<f64> {
        if iteration > self.total_iterations {
            return Err(Error::Range {
                what: "iteration",
                value: iteration as f64,
                min: 0.0,
                max: self.total_iterations as f64,
            });
        }
        if self.total_iterations == 0 {
            return Ok(self.t_start);
        }
        let s = iteration as f64 / self.total_iterations as f64;
        Ok((1.0 - s) * self.t_start + s * self.t_end)
    }
}

/// Everything a provider sees for one sampled view.
#[derive(Clone, Copy, Debug)]
pub struct GuidanceRequest<'a> {
    pub image: &'a Image,
    pub camera: &'a Camera,
    pub reference: Option<&'a Image>,
    /// Noise level.
    pub t: f64,
    /// Normalized scene time in `[0, 1]`.
    pub time: f64,
    pub seed: u64,
}

/// Novel-view guidance: returns a gradient image with the shape of the render.
pub trait GuidanceProvider: Send + Sync {
    fn gradient(&self, request: &GuidanceRequest<'_>) -> Result<Image>;
}

/// Source of ground-truth images for oracle providers.
pub trait GroundTruth: Send + Sync {
    fn render(&self, camera: &Camera, time: f64) -> Result<Image>;
}

/// A fixed cloud seen from anywhere, at any time.
#[derive(Clone, Debug)]
pub struct StaticScene {
    pub cloud: GaussianCloud,
    pub background: Vec3,
}

impl GroundTruth for StaticScene {
    fn render(&self, camera: &Camera, _time: f64) -> Result<Image> {
        Ok(render(&self.cloud, camera, self.background)?.rgb)
    }
}

/// A cloud animated by a deformation field.
#[derive(Clone, Debug)]
pub struct DeformedScene {
    pub cloud: GaussianCloud,
    pub field: HexPlaneField,
    pub decoder: DeformDecoder,
    pub background: Vec3,
}

impl GroundTruth for DeformedScene {
    fn render(&self, camera: &Camera, time: f64) -> Result<Image> {
        let moved = deform(&self.cloud, &self.field, &self.decoder, time)?;
        Ok(render(&moved, camera, self.background)?.rgb)
    }
}

/// Pre-rendered views; requests must match a stored camera and time.
#[derive(Clone, Debug, Default)]
pub struct ImageSet {
    pub views: Vec<(Camera, f64, Image)>,
}

impl ImageSet {
    const MATCH_TOL: f64 = 1e-9;

    fn matches(a: &Camera, b: &Camera) -> bool {
        let close = |x: f64, y: f64| (x - y).abs() <= Self::MATCH_TOL;
        let wrap = |d: f64| (d + 180.0).rem_euclid(360.0) - 180.0;
        wrap(a.azimuth - b.azimuth).abs() <= Self::MATCH_TOL
            && close(a.elevation, b.elevation)
            && close(a.radius, b.radius)
            && close(a.fov_y, b.fov_y)
            && a.width == b.width
            && a.height == b.height
    }

    /// Cameras held by the set, for samplers that must stay inside coverage.
    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|(c, _, _)| *c).collect()
    }
}

impl GroundTruth for ImageSet {
    fn render(&self, camera: &Camera, time: f64) -> Result<Image> {
        self.views
            .iter()
            .find(|(c, t, _)| Self::matches(c, camera) && (t - time).abs() <= Self::MATCH_TOL)
            .map(|(_, _, img)| img.clone())
            .ok_or_else(|| {
                Error::Coverage(format!(
                    "no view at azimuth {:.3}, elevation {:.3}, time {:.4}",
                    camera.azimuth, camera.elevation, time
                ))
            })
    }
}

/// Weight applied to the guidance residual as a function of noise level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceWeight {
    /// `w(t) = t`.
    #[default]
    NoiseLevel,
    Constant(f64),
}

impl GuidanceWeight {
    pub fn at(self, t: f64) -> f64 {
        match self {
            GuidanceWeight::NoiseLevel => t,
            GuidanceWeight::Constant(w) => w,
        }
    }
}

/// A perfect denoiser: the gradient is `w(t)·(Î − I_gt)`.
pub struct OracleGuidance<G> {
    pub target: G,
    pub weight: GuidanceWeight,
}

pub fn oracle_guidance<G: GroundTruth>(target: G) -> OracleGuidance<G> {
    OracleGuidance {
        target,
        weight: GuidanceWeight::NoiseLevel,
    }
}

impl<G: GroundTruth> GuidanceProvider for OracleGuidance<G> {
    fn gradient(&self, request: &GuidanceRequest<'_>) -> Result<Image> {
        let gt = self.target.render(request.camera, request.time)?;
        request.image.check_shape(&gt, "oracle ground truth")?;
        let w = self.weight.at(request.t);
        let data = request.image.data.iter().zip(&gt.data).map(|(a, b)| w * (a - b)).collect();
        Image::from_data(gt.width, gt.height, data)
    }
}

/// Provider that never pushes; useful for ablations and tests.
pub struct ZeroGuidance;

impl GuidanceProvider for ZeroGuidance {
    fn gradient(&self, request: &GuidanceRequest<'_>) -> Result<Image> {
        Ok(Image::new(request.image.width, request.image.height))
    }
}

/// A rendered orbit handed to a refiner.
#[derive(Clone, Copy, Debug)]
pub struct RefineRequest<'a> {
    /// Renders before noise was added.
    pub clean: &'a [Image],
    /// `clean` plus Gaussian noise of standard deviation `t`, clamped to `[0, 1]`.
    pub noisy: &'a [Image],
    pub cameras: &'a [Camera],
    pub times: &'a [f64],
    pub input: Option<&'a Image>,
    pub t: f64,
    pub seed: u64,
}

/// Video-to-video refinement: returns one frame per input frame.
pub trait VideoRefiner: Send + Sync {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<Vec<Image>>;
}

/// Strips the added noise exactly by returning the clean renders.
pub struct IdentityRefiner;

pub fn identity_refiner() -> IdentityRefiner {
    IdentityRefiner
}

impl VideoRefiner for IdentityRefiner {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<Vec<Image>> {
        Ok(request.clean.to_vec())
    }
}

/// Ignores its input and returns ground truth along the trajectory.
pub struct OracleRefiner<G> {
    pub target: G,
}

pub fn oracle_refiner<G: GroundTruth>(target: G) -> OracleRefiner<G> {
    OracleRefiner { target }
}

impl<G: GroundTruth> VideoRefiner for OracleRefiner<G> {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<Vec<Image>> {
        if request.cameras.len() != request.times.len() {
            return Err(Error::dimension("refine times", request.cameras.len(), request.times.len()));
        }
        request
            .cameras
            .iter()
            .zip(request.times)
            .map(|(cam, &time)| self.target.render(cam, time))
            .collect()
    }
}

/// Adds `N(0, t²)` noise per channel, clamped to `[0, 1]`; frame `k` uses
/// its own stream derived from `seed`.
pub fn add_noise(frames: &[Image], t: f64, seed: u64) -> Vec<Image> {
    frames
        .iter()
        .enumerate()
        .map(|(k, frame)| {
            if t == 0.0 {
                return frame.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64, 0x6e6f));
            let normal = Normal::new(0.0, t).expect("finite standard deviation");
            let mut out = frame.clone();
            for v in out.data.iter_mut() {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests;
