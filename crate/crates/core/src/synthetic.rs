//! Synthetic targets with known motion, for round-trip experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::Result;
use crate::gaussians::GaussianCloud;
use crate::guidance::GroundTruth;
use crate::image::Image;
use crate::math::{add3, logit, mat_vec, quat_from_axis_angle, quat_mul, quat_to_mat, scale3, Vec3};
use crate::rasterizer::render;
use crate::trainer::DrivingVideo;

/// A rotation about an axis through the origin followed by a translation,
/// both growing linearly in normalized time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub axis: Vec3,
    /// Radians at time 1.
    pub angle: f64,
    /// Offset at time 1.
    pub translation: Vec3,
}

impl RigidMotion {
    pub fn apply(&self, cloud: &GaussianCloud, time: f64) -> GaussianCloud {
        let q = quat_from_axis_angle(self.axis, self.angle * time);
        let r = quat_to_mat(q);
        let shift = scale3(self.translation, time);
        let mut out = cloud.clone();
        for i in 0..out.len() {
            out.positions[i] = add3(mat_vec(&r, cloud.positions[i]), shift);
            out.rotations[i] = quat_mul(q, cloud.rotations[i]);
        }
        out
    }
}

/// A cloud with smoothly varying colors moved by a rigid motion.
#[derive(Clone, Debug)]
pub struct SyntheticTarget {
    pub cloud: GaussianCloud,
    pub motion: RigidMotion,
    pub background: Vec3,
}

impl SyntheticTarget {
    /// `n` Gaussians filling an ellipsoid of radii (0.45, 0.35, 0.3), turning
    /// 30° about +y while sliding along +x.
    pub fn rigid(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = GaussianCloud::with_capacity(n);
        let radii = [0.45, 0.35, 0.3];
        while cloud.len() < n {
            let u: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if u[0] * u[0] + u[1] * u[1] + u[2] * u[2] > 1.0 {
                continue;
            }
            let p = [u[0] * radii[0], u[1] * radii[1], u[2] * radii[2]];
            let color = [
                0.5 + 0.4 * (4.0 * p[0]).sin(),
                0.5 + 0.4 * (5.0 * p[1] + 1.0).cos(),
                0.5 + 0.4 * (3.0 * p[2] - 2.0 * p[0]).sin(),
            ];
            let axis: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let rotation = quat_from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::PI));
            let log_scale: Vec3 = std::array::from_fn(|_| rng.random_range(0.04f64..0.08).ln());
            cloud.push(p, rotation, log_scale, logit(0.9), color);
        }
        Self {
            cloud,
            motion: RigidMotion {
                axis: [0.0, 1.0, 0.0],
                angle: 30f64.to_radians(),
                translation: [0.15, 0.05, 0.0],
            },
            background: [1.0; 3],
        }
    }

    pub fn at(&self, time: f64) -> GaussianCloud {
        self.motion.apply(&self.cloud, time)
    }

    /// `frames` renders from `camera` at evenly spaced times in `[0, 1]`.
    pub fn driving_video(&self, camera: Camera, frames: usize) -> Result<DrivingVideo> {
        let images = (0..frames)
            .map(|k| {
                let time = if frames > 1 { k as f64 / (frames - 1) as f64 } else { 0.0 };
                self.render(&camera, time)
            })
            .collect::<Result<Vec<Image>>>()?;
        DrivingVideo::new(images, camera)
    }
}

impl GroundTruth for SyntheticTarget {
    fn render(&self, camera: &Camera, time: f64) -> Result<Image> {
        Ok(render(&self.at(time), camera, self.background)?.rgb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::mse;

    #[test]
    fn motion_is_rigid_and_starts_at_rest() {
        let target = SyntheticTarget::rigid(50, 3);
        assert_eq!(target.at(0.0).positions, target.cloud.positions);
        let moved = target.at(1.0);
        for i in 0..10 {
            for j in i + 1..10 {
                let d0 = crate::math::norm3(crate::math::sub3(target.cloud.positions[i], target.cloud.positions[j]));
                let d1 = crate::math::norm3(crate::math::sub3(moved.positions[i], moved.positions[j]));
                assert!((d0 - d1).abs() < 1e-12);
            }
        }
        let cov0 = target.cloud.covariance(0);
        let cov1 = moved.covariance(0);
        let tr = |m: [[f64; 3]; 3]| m[0][0] + m[1][1] + m[2][2];
        assert!((tr(cov0) - tr(cov1)).abs() < 1e-12);
    }

    #[test]
    fn video_frames_change_over_time() {
        let target = SyntheticTarget::rigid(100, 1);
        let video = target.driving_video(Camera::orbit(0.0, 0.0, 32), 14).unwrap();
        assert_eq!(video.len(), 14);
        assert!(mse(&video.frames[0], &video.frames[13]).unwrap() > 1e-4);
    }
}
