//! Perspective EWA projection of 3D Gaussians to screen-space splats, and its adjoint.

use crate::camera::{Camera, Intrinsics, ViewTransform};
use crate::gaussians::{build_covariance, build_covariance_backward, GaussianCloud};
use crate::math::{self, Mat3, Quat, Vec3};

/// Added to the screen covariance diagonal (pixels²).
pub const SCREEN_DILATION: f64 = 0.3;
/// Splat support in standard deviations.
pub const SIGMA_CUTOFF: f64 = 3.0;
/// Frustum guard band for the Jacobian, as a multiple of the half-FOV tangent.
const FRUSTUM_GUARD: f64 = 1.3;

/// A Gaussian after projection to the image plane.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Splat {
    pub id: usize,
    pub mean: [f64; 2],
    /// Inverse 2D covariance `[a, b, c]` of `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: Vec3,
    pub depth: f64,
    /// Inclusive-exclusive pixel bounds `[x0, y0, x1, y1]`, already clipped.
    pub bounds: [usize; 4],
}

/// Upstream gradients for one splat in screen space.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct SplatGrad {
    pub mean: [f64; 2],
    /// Full-matrix gradient on the conic: `[g00, g01, g11]` with `g10 = g01`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: Vec3,
}

impl SplatGrad {
    #[inline]
    pub fn add(&mut self, other: &SplatGrad) {
        self.mean[0] += other.mean[0];
        self.mean[1] += other.mean[1];
        for k in 0..3 {
            self.conic[k] += other.conic[k];
            self.color[k] += other.color[k];
        }
        self.opacity += other.opacity;
    }
}

pub(crate) struct Projector {
    view: ViewTransform,
    k: Intrinsics,
    near: f64,
    far: f64,
    width: usize,
    height: usize,
    lim_x: f64,
    lim_y: f64,
}

/// Screen-space Jacobian inputs with the frustum clamp applied.
struct JacobianTerms {
    tx_c: f64,
    ty_c: f64,
    clamped_x: Option<f64>,
    clamped_y: Option<f64>,
}

impl Projector {
    pub fn new(camera: &Camera) -> Self {
        let k = camera.intrinsics();
        Self {
            view: camera.view(),
            k,
            near: camera.near,
            far: camera.far,
            width: camera.width,
            height: camera.height,
            lim_x: FRUSTUM_GUARD * k.cx / k.fx,
            lim_y: FRUSTUM_GUARD * k.cy / k.fy,
        }
    }

    fn jacobian_terms(&self, t: Vec3) -> JacobianTerms {
        let rx = t[0] / t[2];
        let ry = t[1] / t[2];
        let (tx_c, clamped_x) = if rx > self.lim_x {
            (self.lim_x * t[2], Some(self.lim_x))
        } else if rx < -self.lim_x {
            (-self.lim_x * t[2], Some(-self.lim_x))
        } else {
            (t[0], None)
        };
        let (ty_c, clamped_y) = if ry > self.lim_y {
            (self.lim_y * t[2], Some(self.lim_y))
        } else if ry < -self.lim_y {
            (-self.lim_y * t[2], Some(-self.lim_y))
        } else {
            (t[1], None)
        };
        JacobianTerms {
            tx_c,
            ty_c,
            clamped_x,
            clamped_y,
        }
    }

    /// 2×3 perspective Jacobian rows.
    fn jacobian(&self, t: Vec3, terms: &JacobianTerms) -> [[f64; 3]; 2] {
        let tz = t[2];
        let tz2 = tz * tz;
        [
            [self.k.fx / tz, 0.0, -self.k.fx * terms.tx_c / tz2],
            [0.0, self.k.fy / tz, -self.k.fy * terms.ty_c / tz2],
        ]
    }

    /// `J W Σ Wᵀ Jᵀ + dilation·I` as `(cov_cam, [A, B, C])`.
    fn screen_covariance(&self, cov: &Mat3, j: &[[f64; 3]; 2]) -> (Mat3, [f64; 3]) {
        let w = &self.view.rotation;
        let cov_cam = math::mat_mul(&math::mat_mul(w, cov), &math::transpose(w));
        let mut jc = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                jc[r][c] = j[r][0] * cov_cam[0][c] + j[r][1] * cov_cam[1][c] + j[r][2] * cov_cam[2][c];
            }
        }
        let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let a = dot(&jc[0], &j[0]) + SCREEN_DILATION;
        let b = dot(&jc[0], &j[1]);
        let c = dot(&jc[1], &j[1]) + SCREEN_DILATION;
        (cov_cam, [a, b, c])
    }

    /// Projects Gaussian `i`; `None` when culled or off screen.
    pub fn project(&self, cloud: &GaussianCloud, i: usize) -> Option<Splat> {
        let t = self.view.to_camera(cloud.positions[i]);
        if !(t[2] > self.near && t[2] < self.far) {
            return None;
        }
        let terms = self.jacobian_terms(t);
        let j = self.jacobian(t, &terms);
        let cov = build_covariance(cloud.rotations[i], cloud.log_scales[i]);
        let (_, [a, b, c]) = self.screen_covariance(&cov, &j);
        let det = a * c - b * b;
        if !(det > 0.0) || !det.is_finite() {
            return None;
        }
        let conic = [c / det, -b / det, a / det];
        let mean = [
            self.k.fx * t[0] / t[2] + self.k.cx,
            self.k.fy * t[1] / t[2] + self.k.cy,
        ];
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let radius = SIGMA_CUTOFF * lambda_max.sqrt();
        let x0 = (mean[0] - radius).floor();
        let y0 = (mean[1] - radius).floor();
        let x1 = (mean[0] + radius).ceil() + 1.0;
        let y1 = (mean[1] + radius).ceil() + 1.0;
        if !(x1 > 0.0 && y1 > 0.0 && x0 < self.width as f64 && y0 < self.height as f64) {
            return None;
        }
        let clip = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
        let bounds = [
            clip(x0, self.width),
            clip(y0, self.height),
            clip(x1, self.width),
            clip(y1, self.height),
        ];
        if bounds[0] >= bounds[2] || bounds[1] >= bounds[3] {
            return None;
        }
        Some(Splat {
            id: i,
            mean,
            conic,
            opacity: cloud.opacity(i),
            color: cloud.colors[i],
            depth: t[2],
            bounds,
        })
    }

    /// Pulls screen-space gradients of Gaussian `i` back to its parameters.
    pub fn backward(&self, cloud: &GaussianCloud, i: usize, g: &SplatGrad) -> ParamGrad {
        let p = cloud.positions[i];
        let rot: Quat = cloud.rotations[i];
        let log_scale = cloud.log_scales[i];
        let t = self.view.to_camera(p);
        let terms = self.jacobian_terms(t);
        let j = self.jacobian(t, &terms);
        let cov = build_covariance(rot, log_scale);
        let (cov_cam, [a, b, c]) = self.screen_covariance(&cov, &j);
        let det = a * c - b * b;
        let m = [[c / det, -b / det], [-b / det, a / det]];

        // conic = Σ2⁻¹  =>  G_Σ2 = -M G_M M
        let gm = [[g.conic[0], g.conic[1]], [g.conic[1], g.conic[2]]];
        let mut mg = [[0.0; 2]; 2];
        for r in 0..2 {
            for s in 0..2 {
                mg[r][s] = m[r][0] * gm[0][s] + m[r][1] * gm[1][s];
            }
        }
        let mut g2 = [[0.0; 2]; 2];
        for r in 0..2 {
            for s in 0..2 {
                g2[r][s] = -(mg[r][0] * m[0][s] + mg[r][1] * m[1][s]);
            }
        }

        // Σ2 = J Σc Jᵀ: G_Σc = Jᵀ G2 J, G_J = 2 G2 J Σc
        let mut g_cov_cam = [[0.0; 3]; 3];
        for r in 0..3 {
            for s in 0..3 {
                let mut acc = 0.0;
                for u in 0..2 {
                    for v in 0..2 {
                        acc += j[u][r] * g2[u][v] * j[v][s];
                    }
                }
                g_cov_cam[r][s] = acc;
            }
        }
        let mut g_j = [[0.0; 3]; 2];
        for u in 0..2 {
            for s in 0..3 {
                let mut acc = 0.0;
                for v in 0..2 {
                    for r in 0..3 {
                        acc += g2[u][v] * j[v][r] * cov_cam[r][s];
                    }
                }
                g_j[u][s] = 2.0 * acc;
            }
        }

        let (fx, fy) = (self.k.fx, self.k.fy);
        let tz = t[2];
        let tz2 = tz * tz;
        let tz3 = tz2 * tz;
        let mut d_t = [0.0; 3];
        d_t[2] += g_j[0][0] * (-fx / tz2)
            + g_j[0][2] * (2.0 * fx * terms.tx_c / tz3)
            + g_j[1][1] * (-fy / tz2)
            + g_j[1][2] * (2.0 * fy * terms.ty_c / tz3);
        let d_tx_c = g_j[0][2] * (-fx / tz2);
        let d_ty_c = g_j[1][2] * (-fy / tz2);
        match terms.clamped_x {
            None => d_t[0] += d_tx_c,
            Some(lim) => d_t[2] += d_tx_c * lim,
        }
        match terms.clamped_y {
            None => d_t[1] += d_ty_c,
            Some(lim) => d_t[2] += d_ty_c * lim,
        }
        d_t[0] += g.mean[0] * fx / tz;
        d_t[1] += g.mean[1] * fy / tz;
        d_t[2] -= g.mean[0] * fx * t[0] / tz2 + g.mean[1] * fy * t[1] / tz2;

        let w = &self.view.rotation;
        let d_position = math::mat_t_vec(w, d_t);
        let g_cov = math::mat_mul(&math::mat_mul(&math::transpose(w), &g_cov_cam), w);
        let (d_rotation, d_log_scale) = build_covariance_backward(rot, log_scale, &g_cov);

        let o = cloud.opacity(i);
        ParamGrad {
            position: d_position,
            rotation: d_rotation,
            log_scale: d_log_scale,
            opacity_logit: g.opacity * o * (1.0 - o),
            color: g.color,
            screen_ndc: [
                g.mean[0] * 0.5 * self.width as f64,
                g.mean[1] * 0.5 * self.height as f64,
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct ParamGrad {
    pub position: Vec3,
    pub rotation: Quat,
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub color: Vec3,
    pub screen_ndc: [f64; 2],
}
