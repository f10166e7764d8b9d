//! Optimization loops for the static and dynamic stages.

pub mod adam;
mod config;
mod densify;
mod dynamic;
mod losses;
mod static_fit;

use serde::Serialize;

pub use config::{DynamicFitConfig, StaticFitConfig, StaticLearningRates};
pub use densify::{densify_and_prune, DensifyReport, DensifyStats};
pub use dynamic::{fit_dynamic, DynamicFit};
pub use losses::{loss_ref, mse_gradient, sample_views, sds_step, DeformableScene, SceneGradients, SdsOptions};
pub use static_fit::{fit_static, StaticGroups};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;

/// Frames of the reference-view video with the camera they were seen from.
#[derive(Clone, Debug, PartialEq)]
pub struct DrivingVideo {
    pub frames: Vec<Image>,
    pub camera: Camera,
}

impl DrivingVideo {
    pub fn new(frames: Vec<Image>, camera: Camera) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Video(format!("need at least 2 frames, got {}", frames.len())));
        }
        for (k, f) in frames.iter().enumerate() {
            if f.width != camera.width || f.height != camera.height {
                return Err(Error::Video(format!(
                    "frame {k} is {}x{}, camera expects {}x{}",
                    f.width, f.height, camera.width, camera.height
                )));
            }
        }
        camera.validate()?;
        Ok(Self { frames, camera })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Normalized time of frame `k`: `k / (𝒯 − 1)`.
    pub fn time_of(&self, k: usize) -> f64 {
        k as f64 / (self.frames.len() - 1) as f64
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub stage: &'static str,
    pub iteration: usize,
    pub loss_ref: f64,
    /// Mean squared guidance gradient over the sampled views.
    pub loss_guidance: f64,
    pub noise: f64,
    pub gaussians: usize,
    pub wall_time: f64,
}

pub(crate) fn check_finite(stage: &str, iteration: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{stage} loss is {loss} at iteration {iteration}")))
    }
}

#[cfg(test)]
mod tests;
