use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::NoiseSchedule;
use crate::math::Vec3;

/// Adam learning rates for the static cloud's parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticLearningRates {
    /// Position rate decays exponentially from `position_init` to `position_final`.
    pub position_init: f64,
    pub position_final: f64,
    pub color: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl Default for StaticLearningRates {
    fn default() -> Self {
        Self {
            position_init: 1e-3,
            position_final: 2e-5,
            color: 0.01,
            opacity: 0.05,
            scale: 0.005,
            rotation: 0.005,
        }
    }
}

impl StaticLearningRates {
    pub fn position_at(&self, iteration: usize, iterations: usize) -> f64 {
        if iterations <= 1 {
            return self.position_init;
        }
        let s = (iteration as f64 / (iterations - 1) as f64).clamp(0.0, 1.0);
        ((1.0 - s) * self.position_init.ln() + s * self.position_final.ln()).exp()
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.position_init,
            self.position_final,
            self.color,
            self.opacity,
            self.scale,
            self.rotation,
        ];
        if all.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("learning rates must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticFitConfig {
    pub iterations: usize,
    pub views_per_iteration: usize,
    pub background: Vec3,
    pub initial_gaussians: usize,
    /// Initial Gaussians are drawn uniformly in a ball of this radius.
    pub init_radius: f64,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub dense_percent: f64,
    /// Scene size used with `dense_percent` to choose between split and clone.
    pub scene_extent: f64,
    pub densify: bool,
    pub min_opacity: f64,
    pub max_gaussians: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Side of the square renders used for sampled guidance views.
    pub render_size: usize,
    pub elevation_range: [f64; 2],
    pub lr: StaticLearningRates,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for StaticFitConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            views_per_iteration: 16,
            background: [1.0; 3],
            initial_gaussians: 5000,
            init_radius: 0.5,
            densify_interval: 100,
            densify_grad_threshold: 0.05,
            dense_percent: 0.1,
            scene_extent: 4.0,
            densify: true,
            min_opacity: 0.01,
            max_gaussians: 50_000,
            t_start: NoiseSchedule::STATIC.0,
            t_end: NoiseSchedule::STATIC.1,
            render_size: 256,
            elevation_range: [-30.0, 30.0],
            lr: StaticLearningRates::default(),
            seed: 0,
        }
    }
}

fn check_elevation(range: [f64; 2]) -> Result<()> {
    if !(range[0] <= range[1] && range[0] > -90.0 && range[1] < 90.0) {
        return Err(Error::Config(format!("elevation range {range:?} must be ordered within (-90, 90)")));
    }
    Ok(())
}

impl StaticFitConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.t_start, self.t_end, self.iterations.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_gaussians == 0 || self.render_size == 0 || self.densify_interval == 0 {
            return Err(Error::Config(
                "initial_gaussians, render_size and densify_interval must be positive".into(),
            ));
        }
        if !(self.densify_grad_threshold > 0.0 && self.dense_percent > 0.0 && self.scene_extent > 0.0) {
            return Err(Error::Config("densification thresholds must be positive".into()));
        }
        if !(self.init_radius > 0.0) || !(0.0..1.0).contains(&self.min_opacity) {
            return Err(Error::Config("init_radius must be positive and min_opacity in [0, 1)".into()));
        }
        if self.max_gaussians < self.initial_gaussians {
            return Err(Error::Config("max_gaussians must be at least initial_gaussians".into()));
        }
        check_elevation(self.elevation_range)?;
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        self.lr.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicFitConfig {
    pub iterations: usize,
    pub views_per_timestep: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub freeze_static: bool,
    pub grid_lr: f64,
    pub mlp_lr: f64,
    /// Used only when `freeze_static` is false.
    pub static_lr: StaticLearningRates,
    pub spatial_res: usize,
    pub temporal_res: usize,
    pub features: usize,
    pub decoder_hidden: usize,
    pub decoder_layers: usize,
    pub render_size: usize,
    pub elevation_range: [f64; 2],
    pub background: Vec3,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DynamicFitConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            views_per_timestep: 4,
            t_start: NoiseSchedule::DYNAMIC.0,
            t_end: NoiseSchedule::DYNAMIC.1,
            freeze_static: true,
            grid_lr: 0.0064,
            mlp_lr: 0.00064,
            static_lr: StaticLearningRates::default(),
            spatial_res: 32,
            temporal_res: 32,
            features: 32,
            decoder_hidden: 64,
            decoder_layers: 2,
            render_size: 256,
            elevation_range: [-30.0, 30.0],
            background: [1.0; 3],
            seed: 0,
        }
    }
}

impl DynamicFitConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.t_start, self.t_end, self.iterations.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.spatial_res < 2 || self.temporal_res < 2 {
            return Err(Error::Config("HexPlane resolutions must be at least 2".into()));
        }
        if self.features == 0 || self.decoder_hidden == 0 || self.decoder_layers == 0 || self.render_size == 0 {
            return Err(Error::Config("feature, decoder and render sizes must be positive".into()));
        }
        if !(self.grid_lr > 0.0 && self.mlp_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        check_elevation(self.elevation_range)?;
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        self.static_lr.validate()
    }
}
