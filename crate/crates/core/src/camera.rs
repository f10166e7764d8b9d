//! Orbit pinhole cameras.
//!
//! World is y-up. A camera sits on a sphere of `radius` around the origin at
//! (`azimuth`, `elevation`) and looks at the origin. Azimuth 0 places the
//! camera on +z; positive elevation moves it toward +y. Camera space is
//! x right, y down, z forward, so image rows grow downward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{cross3, dot3, mat_vec, normalize3, scale3, sub3, Mat3, Vec3};

pub const DEFAULT_RADIUS: f64 = 2.0;
pub const DEFAULT_FOV_Y: f64 = 49.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    /// Degrees.
    pub azimuth: f64,
    /// Degrees, strictly inside (-90, 90).
    pub elevation: f64,
    pub radius: f64,
    /// Vertical field of view in degrees.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            azimuth: 0.0,
            elevation: 0.0,
            radius: DEFAULT_RADIUS,
            fov_y: DEFAULT_FOV_Y,
            width: 256,
            height: 256,
            near: 0.01,
            far: 100.0,
        }
    }
}

/// World-to-camera rigid transform `x_cam = R (x_world - center)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewTransform {
    pub rotation: Mat3,
    pub center: Vec3,
}

impl ViewTransform {
    #[inline]
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        mat_vec(&self.rotation, sub3(p, self.center))
    }
}

/// Pinhole intrinsics in pixels; principal point at the image center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn orbit(azimuth: f64, elevation: f64, size: usize) -> Self {
        Self {
            azimuth,
            elevation,
            width: size,
            height: size,
            ..Self::default()
        }
    }

    /// `frames` cameras evenly spaced in azimuth starting at `start`.
    pub fn turntable(frames: usize, start: f64, elevation: f64, size: usize) -> Vec<Self> {
        (0..frames)
            .map(|k| {
                let az = start + 360.0 * k as f64 / frames as f64;
                Self::orbit((az + 180.0).rem_euclid(360.0) - 180.0, elevation, size)
            })
            .collect()
    }

    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Camera(msg));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}x{} must be positive", self.width, self.height));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("need 0 < near < far, got near={} far={}", self.near, self.far));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return bad(format!("radius {} must be positive", self.radius));
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return bad(format!("fov_y {} must lie in (0, 180)", self.fov_y));
        }
        if !(self.elevation.abs() < 90.0) || !self.azimuth.is_finite() {
            return bad(format!(
                "elevation {} must lie in (-90, 90) and azimuth must be finite",
                self.elevation
            ));
        }
        Ok(())
    }

    pub fn position(&self) -> Vec3 {
        let az = self.azimuth.to_radians();
        let el = self.elevation.to_radians();
        [
            self.radius * el.cos() * az.sin(),
            self.radius * el.sin(),
            self.radius * el.cos() * az.cos(),
        ]
    }

    pub fn view(&self) -> ViewTransform {
        let center = self.position();
        let forward = normalize3(scale3(center, -1.0));
        let right = normalize3(cross3(forward, [0.0, 1.0, 0.0]));
        let down = cross3(forward, right);
        ViewTransform {
            rotation: [right, down, forward],
            center,
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let fy = 0.5 * self.height as f64 / (0.5 * self.fov_y.to_radians()).tan();
        Intrinsics {
            fx: fy,
            fy,
            cx: 0.5 * self.width as f64,
            cy: 0.5 * self.height as f64,
        }
    }

    /// Projects a world point to continuous pixel coordinates and camera depth.
    pub fn project(&self, p: Vec3) -> Option<([f64; 2], f64)> {
        let t = self.view().to_camera(p);
        if t[2] <= self.near {
            return None;
        }
        let k = self.intrinsics();
        Some(([k.fx * t[0] / t[2] + k.cx, k.fy * t[1] / t[2] + k.cy], t[2]))
    }

    /// Unit direction from `p` toward the camera center.
    pub fn direction_to(&self, p: Vec3) -> Vec3 {
        normalize3(sub3(self.position(), p))
    }

    pub fn forward(&self) -> Vec3 {
        self.view().rotation[2]
    }
}

/// Orthonormality residual of the rotation block, used by tests and validation.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let expected = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot3(r[i], r[j]) - expected).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::det3;

    #[test]
    fn turntable_wraps_azimuths() {
        let cams = Camera::turntable(4, 90.0, 10.0, 8);
        let az: Vec<f64> = cams.iter().map(|c| c.azimuth).collect();
        assert_eq!(az, vec![90.0, -180.0, -90.0, 0.0]);
        assert!(cams.iter().all(|c| c.elevation == 10.0 && c.width == 8));
    }

    #[test]
    fn view_rotation_is_rigid() {
        for (az, el) in [(0.0, 0.0), (37.0, -20.0), (-150.0, 60.0), (180.0, 10.0)] {
            let cam = Camera::orbit(az, el, 32);
            let v = cam.view();
            assert!(orthonormality_error(&v.rotation) < 1e-12);
            assert!((det3(&v.rotation) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_projects_to_image_center() {
        let cam = Camera::orbit(73.0, 21.0, 64);
        let (px, depth) = cam.project([0.0; 3]).unwrap();
        assert!((px[0] - 32.0).abs() < 1e-9 && (px[1] - 32.0).abs() < 1e-9);
        assert!((depth - cam.radius).abs() < 1e-12);
    }

    #[test]
    fn up_is_up_in_the_image() {
        let cam = Camera::orbit(0.0, 0.0, 64);
        let (px, _) = cam.project([0.0, 0.3, 0.0]).unwrap();
        assert!(px[1] < 32.0);
        let (px, _) = cam.project([0.3, 0.0, 0.0]).unwrap();
        assert!(px[0] > 32.0);
    }

    #[test]
    fn invalid_cameras_are_rejected() {
        let mut cam = Camera::default();
        cam.near = 0.0;
        assert!(cam.validate().is_err());
        let mut cam = Camera::default();
        cam.width = 0;
        assert!(cam.validate().is_err());
        let mut cam = Camera::default();
        cam.far = cam.near;
        assert!(cam.validate().is_err());
        assert!(Camera::default().validate().is_ok());
    }
}
