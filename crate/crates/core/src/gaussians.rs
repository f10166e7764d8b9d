//! Static Gaussian clouds, per-timestamp deltas, and covariance construction.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3};

/// A set of anisotropic 3D Gaussians with constant per-Gaussian color.
///
/// Rotations are stored unnormalized and normalized whenever a rotation
/// matrix is built. Scales are natural logs of per-axis standard deviations,
/// opacities are logits.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Vec3>,
}

impl GaussianCloud {
    pub fn new(
        positions: Vec<Vec3>,
        rotations: Vec<Quat>,
        log_scales: Vec<Vec3>,
        opacity_logits: Vec<f64>,
        colors: Vec<Vec3>,
    ) -> Result<Self> {
        let cloud = Self {
            positions,
            rotations,
            log_scales,
            opacity_logits,
            colors,
        };
        cloud.check()?;
        Ok(cloud)
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, position: Vec3, rotation: Quat, log_scale: Vec3, opacity_logit: f64, color: Vec3) {
        self.positions.push(position);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(opacity_logit);
        self.colors.push(color);
    }

    /// Isotropic Gaussian with identity rotation.
    pub fn push_isotropic(&mut self, position: Vec3, sigma: f64, opacity: f64, color: Vec3) {
        let s = sigma.ln();
        self.push(position, [1.0, 0.0, 0.0, 0.0], [s, s, s], math::logit(opacity), color);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Verifies that every attribute array has the same length.
    pub fn check(&self) -> Result<()> {
        let n = self.positions.len();
        for (what, len) in [
            ("rotations", self.rotations.len()),
            ("log_scales", self.log_scales.len()),
            ("opacity_logits", self.opacity_logits.len()),
            ("colors", self.colors.len()),
        ] {
            if len != n {
                return Err(Error::dimension(what, n, len));
            }
        }
        Ok(())
    }

    pub fn opacity(&self, i: usize) -> f64 {
        math::sigmoid(self.opacity_logits[i])
    }

    pub fn unit_rotation(&self, i: usize) -> Quat {
        math::normalize_quat(self.rotations[i])
    }

    pub fn scales(&self, i: usize) -> Vec3 {
        let s = self.log_scales[i];
        [s[0].exp(), s[1].exp(), s[2].exp()]
    }

    pub fn covariance(&self, i: usize) -> Mat3 {
        build_covariance(self.rotations[i], self.log_scales[i])
    }

    /// Keeps the Gaussians for which `keep` is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        retain_by(&mut self.positions, keep);
        retain_by(&mut self.rotations, keep);
        retain_by(&mut self.log_scales, keep);
        retain_by(&mut self.opacity_logits, keep);
        retain_by(&mut self.colors, keep);
    }

    /// Axis-aligned bounds of the Gaussian centers.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.positions.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }

    /// Recenters and uniformly rescales so every center lies in `[-extent, extent]³`.
    ///
    /// Returns the applied `(center, scale)` so callers can undo it.
    pub fn normalize_to_box(&mut self, extent: f64) -> (Vec3, f64) {
        let Some((lo, hi)) = self.bounds() else {
            return ([0.0; 3], 1.0);
        };
        let center = math::scale3(math::add3(lo, hi), 0.5);
        let half = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).fold(0.0, f64::max);
        let scale = if half > 0.0 { extent / half } else { 1.0 };
        for p in &mut self.positions {
            *p = math::scale3(math::sub3(*p, center), scale);
        }
        let ln_scale = scale.ln();
        for s in &mut self.log_scales {
            for v in s.iter_mut() {
                *v += ln_scale;
            }
        }
        (center, scale)
    }

    /// `n` Gaussians with centers uniform in a ball of `radius`, random colors,
    /// opacity 0.1 and isotropic scale near the mean inter-point spacing.
    pub fn random_ball<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Self {
        let mut cloud = Self::with_capacity(n);
        let spacing = radius * (4.0 / 3.0 * std::f64::consts::PI / n.max(1) as f64).cbrt();
        let log_scale = (0.5 * spacing).ln();
        while cloud.len() < n {
            let p = [
                rng.random_range(-radius..radius),
                rng.random_range(-radius..radius),
                rng.random_range(-radius..radius),
            ];
            if math::norm3(p) > radius {
                continue;
            }
            let color = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            cloud.push(p, [1.0, 0.0, 0.0, 0.0], [log_scale; 3], math::logit(0.1), color);
        }
        cloud
    }

    /// Random small scene for gradient tests: `n` Gaussians near the origin.
    pub fn random_test_scene<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut cloud = Self::with_capacity(n);
        for _ in 0..n {
            let p = [
                rng.random_range(-0.35..0.35),
                rng.random_range(-0.35..0.35),
                rng.random_range(-0.35..0.35),
            ];
            let q: Quat = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            let s = [
                rng.random_range(-2.8..-1.6),
                rng.random_range(-2.8..-1.6),
                rng.random_range(-2.8..-1.6),
            ];
            let color = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            cloud.push(p, q, s, rng.random_range(-1.5..2.5), color);
        }
        cloud
    }
}

pub(crate) fn retain_by<T>(values: &mut Vec<T>, keep: &[bool]) {
    let mut flags = keep.iter();
    values.retain(|_| *flags.next().unwrap_or(&true));
}

/// Additive per-Gaussian deformation of position, rotation and log-scale.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDelta {
    pub d_position: Vec<Vec3>,
    pub d_rotation: Vec<Quat>,
    pub d_log_scale: Vec<Vec3>,
}

impl GaussianDelta {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_position: vec![[0.0; 3]; n],
            d_rotation: vec![[0.0; 4]; n],
            d_log_scale: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_position.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.d_position.len();
        if self.d_rotation.len() != n {
            return Err(Error::dimension("d_rotation", n, self.d_rotation.len()));
        }
        if self.d_log_scale.len() != n {
            return Err(Error::dimension("d_log_scale", n, self.d_log_scale.len()));
        }
        Ok(())
    }

    pub fn max_abs_position(&self) -> f64 {
        self.d_position
            .iter()
            .flat_map(|d| d.iter())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Applies a delta: positions, raw quaternion components and log-scales are
/// summed; opacity and color pass through.
///
/// The summed quaternion is kept unnormalized and renormalized wherever a
/// rotation is used, so a zero delta reproduces the input bit for bit.
pub fn apply_delta(cloud: &GaussianCloud, delta: &GaussianDelta) -> Result<GaussianCloud> {
    delta.check()?;
    if delta.len() != cloud.len() {
        return Err(Error::dimension("delta", cloud.len(), delta.len()));
    }
    let positions = cloud
        .positions
        .iter()
        .zip(&delta.d_position)
        .map(|(p, d)| math::add3(*p, *d))
        .collect();
    let rotations = cloud
        .rotations
        .iter()
        .zip(&delta.d_rotation)
        .map(|(q, d)| [q[0] + d[0], q[1] + d[1], q[2] + d[2], q[3] + d[3]])
        .collect();
    let log_scales = cloud
        .log_scales
        .iter()
        .zip(&delta.d_log_scale)
        .map(|(s, d)| math::add3(*s, *d))
        .collect();
    Ok(GaussianCloud {
        positions,
        rotations,
        log_scales,
        opacity_logits: cloud.opacity_logits.clone(),
        colors: cloud.colors.clone(),
    })
}

/// `R diag(exp(2 s)) Rᵀ` with `R` from the normalized quaternion.
pub fn build_covariance(rotation: Quat, log_scale: Vec3) -> Mat3 {
    let r = math::quat_to_mat(math::normalize_quat(rotation));
    let var = [
        (2.0 * log_scale[0]).exp(),
        (2.0 * log_scale[1]).exp(),
        (2.0 * log_scale[2]).exp(),
    ];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = r[i][0] * var[0] * r[j][0] + r[i][1] * var[1] * r[j][1] + r[i][2] * var[2] * r[j][2];
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Pulls a symmetric-matrix gradient `dL/dΣ` back to the raw quaternion and log-scales.
pub fn build_covariance_backward(rotation: Quat, log_scale: Vec3, d_cov: &Mat3) -> (Quat, Vec3) {
    let unit = math::normalize_quat(rotation);
    let r = math::quat_to_mat(unit);
    let s = [log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp()];
    // Σ = M Mᵀ with M = R S, so dL/dM = (G + Gᵀ) M.
    let mut g_m = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += (d_cov[i][j] + d_cov[j][i]) * r[j][k] * s[k];
            }
            g_m[i][k] = acc;
        }
    }
    let mut d_log_scale = [0.0; 3];
    let mut d_r = [[0.0; 3]; 3];
    for k in 0..3 {
        let mut acc = 0.0;
        for i in 0..3 {
            acc += g_m[i][k] * r[i][k];
            d_r[i][k] = g_m[i][k] * s[k];
        }
        d_log_scale[k] = acc * s[k];
    }
    let d_unit = math::quat_to_mat_backward(unit, &d_r);
    (math::normalize_quat_backward(rotation, d_unit), d_log_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_at_origin() -> GaussianCloud {
        let mut c = GaussianCloud::with_capacity(1);
        c.push([0.0; 3], [1.0, 0.0, 0.0, 0.0], [0.0; 3], 0.0, [0.5; 3]);
        c
    }

    #[test]
    fn zero_delta_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = GaussianCloud::random_test_scene(20, &mut rng);
        let out = apply_delta(&cloud, &GaussianDelta::zeros(20)).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn pure_translation() {
        let cloud = one_at_origin();
        let mut delta = GaussianDelta::zeros(1);
        delta.d_position[0] = [0.1, 0.0, 0.0];
        let out = apply_delta(&cloud, &delta).unwrap();
        assert_eq!(out.positions[0], [0.1, 0.0, 0.0]);
        assert_eq!(out.rotations, cloud.rotations);
        assert_eq!(out.log_scales, cloud.log_scales);
        assert_eq!(out.opacity_logits, cloud.opacity_logits);
        assert_eq!(out.colors, cloud.colors);
    }

    #[test]
    fn rotation_delta_renormalizes() {
        let cloud = one_at_origin();
        let mut delta = GaussianDelta::zeros(1);
        delta.d_rotation[0] = [0.0, 1.0, 0.0, 0.0];
        let out = apply_delta(&cloud, &delta).unwrap();
        let q = out.unit_rotation(0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in q.iter().zip([h, h, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn size_mismatch_errors() {
        let cloud = one_at_origin();
        let err = apply_delta(&cloud, &GaussianDelta::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn covariance_examples() {
        let id = build_covariance([1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(id, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

        let ln2 = 2f64.ln();
        let c = build_covariance([1.0, 0.0, 0.0, 0.0], [ln2, 0.0, 0.0]);
        let expect = [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[i][j] - expect[i][j]).abs() < 1e-12);
            }
        }

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = build_covariance([h, 0.0, 0.0, h], [ln2, 0.0, 0.0]);
        let expect = [[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[i][j] - expect[i][j]).abs() < 1e-12, "{c:?}");
            }
        }
    }

    #[test]
    fn covariance_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let q: Quat = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let s: Vec3 = [
                rng.random_range(-1.0..0.5),
                rng.random_range(-1.0..0.5),
                rng.random_range(-1.0..0.5),
            ];
            let mut g = [[0.0; 3]; 3];
            for row in g.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            let loss = |q: Quat, s: Vec3| {
                let c = build_covariance(q, s);
                (0..9).map(|k| c[k / 3][k % 3] * g[k / 3][k % 3]).sum::<f64>()
            };
            let (dq, ds) = build_covariance_backward(q, s, &g);
            let h = 1e-6;
            for k in 0..4 {
                let (mut qp, mut qm) = (q, q);
                qp[k] += h;
                qm[k] -= h;
                let fd = (loss(qp, s) - loss(qm, s)) / (2.0 * h);
                assert!((fd - dq[k]).abs() < 1e-6 * (1.0 + fd.abs()), "dq {k}: {fd} {}", dq[k]);
            }
            for k in 0..3 {
                let (mut sp, mut sm) = (s, s);
                sp[k] += h;
                sm[k] -= h;
                let fd = (loss(q, sp) - loss(q, sm)) / (2.0 * h);
                assert!((fd - ds[k]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
