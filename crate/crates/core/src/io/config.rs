//! Pipeline configuration in TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::mix_seed;
use crate::mesh::{default_backprojection_views, BackprojectOptions, Bounds, ExtractOptions, RefineOptions};
use crate::trainer::{DynamicFitConfig, StaticFitConfig};

/// Mesh export settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub grid_resolution: usize,
    pub iso: f64,
    pub bounds: Bounds,
    pub texture_size: usize,
    /// Side of the renders used for color back-projection.
    pub render_size: usize,
    pub max_flipped: f64,
    pub depth_tolerance: f64,
    pub background: [f64; 3],
}

impl Default for MeshConfig {
    fn default() -> Self {
        let bp = BackprojectOptions::default();
        Self {
            grid_resolution: 128,
            iso: 1.0,
            bounds: Bounds::default(),
            texture_size: 1024,
            render_size: 256,
            max_flipped: 0.05,
            depth_tolerance: bp.depth_tolerance,
            background: [1.0; 3],
        }
    }
}

impl MeshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution < 2 {
            return Err(Error::Config("mesh grid_resolution must be at least 2".into()));
        }
        if self.texture_size == 0 || self.render_size == 0 {
            return Err(Error::Config("mesh texture_size and render_size must be positive".into()));
        }
        if (0..3).any(|k| !(self.bounds.min[k] < self.bounds.max[k])) {
            return Err(Error::Config("mesh bounds must have min < max on every axis".into()));
        }
        if !(0.0..=1.0).contains(&self.max_flipped) {
            return Err(Error::Config("mesh max_flipped must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            grid_resolution: self.grid_resolution,
            iso: self.iso,
            bounds: self.bounds,
            texture_size: self.texture_size,
            views: default_backprojection_views(self.render_size),
            background: self.background,
            max_flipped: self.max_flipped,
            backproject: BackprojectOptions {
                depth_tolerance: self.depth_tolerance,
                ..BackprojectOptions::default()
            },
        }
    }
}

/// Every stage's settings plus the one seed they are all derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default, rename = "static")]
    pub static_fit: StaticFitConfig,
    #[serde(default)]
    pub dynamic: DynamicFitConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub refine: RefineOptions,
}

impl PipelineConfig {
    pub fn new(seed: u64) -> Self {
        let mut config = Self {
            seed,
            static_fit: StaticFitConfig::default(),
            dynamic: DynamicFitConfig::default(),
            mesh: MeshConfig::default(),
            refine: RefineOptions::default(),
        };
        config.derive_seeds();
        config
    }

    /// Sets each stage's seed from the pipeline seed.
    pub fn derive_seeds(&mut self) {
        self.static_fit.seed = mix_seed(self.seed, 1, 0x5354);
        self.dynamic.seed = mix_seed(self.seed, 2, 0x4459);
        self.refine.seed = mix_seed(self.seed, 3, 0x5246);
    }

    pub fn validate(&self) -> Result<()> {
        self.static_fit.validate()?;
        self.dynamic.validate()?;
        self.mesh.validate()?;
        self.refine.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.derive_seeds();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required() {
        let err = PipelineConfig::from_toml("[static]\niterations = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("seed")), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(PipelineConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
        assert!(PipelineConfig::from_toml("seed = 1\n[static]\nitertions = 2\n").is_err());
    }

    #[test]
    fn round_trip_and_seed_derivation() {
        let mut config = PipelineConfig::from_toml("seed = 42\n[static]\niterations = 7\n[mesh]\niso = 0.5\n").unwrap();
        assert_eq!(config.static_fit.iterations, 7);
        assert_eq!(config.mesh.iso, 0.5);
        assert_eq!(config, PipelineConfig::new(42).with(|c| {
            c.static_fit.iterations = 7;
            c.mesh.iso = 0.5;
        }));
        assert_ne!(config.static_fit.seed, config.dynamic.seed);
        let text = config.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), config);
        config.seed = 43;
        config.derive_seeds();
        assert_ne!(config.static_fit.seed, PipelineConfig::new(42).static_fit.seed);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = PipelineConfig::from_toml("seed = 1\n[static]\nt_start = 1.5\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = PipelineConfig::from_toml("seed = 1\n[mesh]\ngrid_resolution = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    trait With: Sized {
        fn with(self, f: impl FnOnce(&mut Self)) -> Self;
    }

    impl With for PipelineConfig {
        fn with(mut self, f: impl FnOnce(&mut Self)) -> Self {
            f(&mut self);
            self
        }
    }
}
