//! Azimuth alignment of a generated cloud to a reference image.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussians::GaussianCloud;
use crate::image::Image;
use crate::math::Vec3;
use crate::rasterizer::render;

/// Relative slack within which two losses count as tied.
const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub azimuth: f64,
    pub loss: f64,
    /// Every `(azimuth, loss)` tried, in scan order.
    pub scan: Vec<(f64, f64)>,
}

/// Renders `cloud` at elevation 0 from azimuths `-180, -180 + step, ..., 180`
/// and returns the one with the smallest squared pixel error to `reference`.
/// Ties go to the smallest `|azimuth|`, then to the positive one.
pub fn align_azimuth(cloud: &GaussianCloud, reference: &Image, step: f64, background: Vec3) -> Result<Alignment> {
    if !(step > 0.0 && step <= 360.0) {
        return Err(Error::Range {
            what: "azimuth step",
            value: step,
            min: 0.0,
            max: 360.0,
        });
    }
    let count = (360.0 / step + 1e-9).floor() as usize;
    let azimuths: Vec<f64> = (0..=count).map(|k| -180.0 + step * k as f64).collect();
    let template = Camera::orbit(0.0, 0.0, reference.width).with_size(reference.width, reference.height);
    let scan = azimuths
        .par_iter()
        .map(|&az| {
            let cam = Camera { azimuth: az, ..template };
            let img = render(cloud, &cam, background)?.rgb;
            let loss: f64 = img.data.iter().zip(&reference.data).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((az, loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let min = scan.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::Numerical("alignment loss is not finite".into()));
    }
    let slack = TIE_TOL * min.abs().max(1e-300);
    let (azimuth, loss) = scan
        .iter()
        .copied()
        .filter(|s| s.1 <= min + slack)
        .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()).then(b.0.total_cmp(&a.0)))
        .expect("scan is nonempty");
    Ok(Alignment { azimuth, loss, scan })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const WHITE: Vec3 = [1.0; 3];

    fn scene() -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        GaussianCloud::random_test_scene(12, &mut rng)
    }

    #[test]
    fn finds_its_own_azimuth() {
        let cloud = scene();
        for az in [0.0, 40.0] {
            let reference = render(&cloud, &Camera::orbit(az, 0.0, 32), WHITE).unwrap().rgb;
            let found = align_azimuth(&cloud, &reference, 5.0, WHITE).unwrap();
            assert!((found.azimuth - az).abs() <= 5.0, "{az} -> {}", found.azimuth);
            assert_eq!(found.scan.len(), 73);
        }
    }

    #[test]
    fn symmetric_cloud_breaks_ties_at_zero() {
        let mut cloud = GaussianCloud::with_capacity(1);
        cloud.push_isotropic([0.0, 0.1, 0.0], 0.2, 0.8, [0.3, 0.6, 0.2]);
        let reference = Image::filled(24, 24, [0.5; 3]);
        let found = align_azimuth(&cloud, &reference, 10.0, WHITE).unwrap();
        assert_eq!(found.azimuth, 0.0);
    }

    #[test]
    fn bad_step_is_rejected() {
        let reference = Image::filled(8, 8, [1.0; 3]);
        assert!(align_azimuth(&scene(), &reference, 0.0, WHITE).is_err());
    }
}
