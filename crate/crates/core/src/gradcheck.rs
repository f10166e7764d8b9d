//! Central finite-difference checks of the hand-written backward passes.
//!
//! The numeric side only ever calls forward functions, so it stays
//! independent of the analytic code it is checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::Camera;
use crate::error::Result;
use crate::gaussians::GaussianCloud;
use crate::hexplane::{self, DeformDecoder, DeformGradients, HexPlaneField};
use crate::image::Image;
use crate::rasterizer::{self, RenderGradients};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-5;

/// One analytic-vs-numeric comparison that failed tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradcheckReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
    pub worst_relative: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn compare(&mut self, parameter: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        if diff > ABS_TOL {
            self.worst_relative = self.worst_relative.max(diff / scale);
        }
        if diff > (REL_TOL * scale).max(ABS_TOL) {
            self.violations.push(Violation {
                parameter: parameter(),
                analytic,
                numeric,
            });
        }
    }

    pub fn merge(&mut self, other: GradcheckReport) {
        self.checked += other.checked;
        self.violations.extend(other.violations);
        self.worst_relative = self.worst_relative.max(other.worst_relative);
    }
}

fn random_upstream(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Image {
    let data = (0..width * height * 3)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Image::from_data(width, height, data).expect("sized")
}

fn weighted_sum(img: &Image, weights: &Image) -> f64 {
    img.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
}

/// Mutable access to parameter `k` of Gaussian `i` in the flattened layout
/// used by [`RenderGradients::flatten`].
fn cloud_param(cloud: &mut GaussianCloud, group: usize, i: usize, k: usize) -> &mut f64 {
    match group {
        0 => &mut cloud.positions[i][k],
        1 => &mut cloud.rotations[i][k],
        2 => &mut cloud.log_scales[i][k],
        3 => &mut cloud.opacity_logits[i],
        _ => &mut cloud.colors[i][k],
    }
}

const GROUPS: [(&str, usize); 5] = [
    ("position", 3),
    ("rotation", 4),
    ("log_scale", 3),
    ("opacity_logit", 1),
    ("color", 3),
];

fn analytic_value(g: &RenderGradients, group: usize, i: usize, k: usize) -> f64 {
    match group {
        0 => g.positions[i][k],
        1 => g.rotations[i][k],
        2 => g.log_scales[i][k],
        3 => g.opacity_logits[i],
        _ => g.colors[i][k],
    }
}

/// Checks every rasterizer parameter gradient of `cloud` seen from `camera`
/// against central differences of `Σ upstream · render`.
pub fn check_render(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: [f64; 3],
    upstream: &Image,
) -> Result<GradcheckReport> {
    let analytic = rasterizer::render_backward(cloud, camera, background, upstream)?;
    let loss = |c: &GaussianCloud| -> Result<f64> {
        Ok(weighted_sum(&rasterizer::render(c, camera, background)?.rgb, upstream))
    };
    let mut report = GradcheckReport::default();
    let mut probe = cloud.clone();
    for i in 0..cloud.len() {
        for (group, &(name, width)) in GROUPS.iter().enumerate() {
            for k in 0..width {
                let original = *cloud_param(&mut probe, group, i, k);
                *cloud_param(&mut probe, group, i, k) = original + FD_STEP;
                let plus = loss(&probe)?;
                *cloud_param(&mut probe, group, i, k) = original - FD_STEP;
                let minus = loss(&probe)?;
                *cloud_param(&mut probe, group, i, k) = original;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                report.compare(
                    || format!("gaussian {i} {name}[{k}]"),
                    analytic_value(&analytic, group, i, k),
                    numeric,
                );
            }
        }
    }
    Ok(report)
}

/// A seeded random scene: up to 10 Gaussians viewed at 32×32 from a random orbit.
pub fn random_render_case(seed: u64) -> (GaussianCloud, Camera, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=10);
    let cloud = GaussianCloud::random_test_scene(n, &mut rng);
    let camera = Camera::orbit(
        rng.random_range(-180.0..180.0),
        rng.random_range(-30.0..30.0),
        32,
    );
    let upstream = random_upstream(32, 32, &mut rng);
    (cloud, camera, upstream)
}

/// A seeded random deformation instance with a small field so every
/// parameter can be probed.
pub fn random_deform_case(seed: u64) -> (GaussianCloud, HexPlaneField, DeformDecoder, f64, Camera, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD3F0);
    let n = rng.random_range(2..=6);
    let cloud = GaussianCloud::random_test_scene(n, &mut rng);
    let mut field = HexPlaneField::new(4, 3, 4, &mut rng);
    for v in field.params.iter_mut() {
        *v = rng.random_range(0.5..1.5);
    }
    let mut decoder = DeformDecoder::new(4, 8, 2, &mut rng);
    // Give the zero-initialized heads non-trivial weights so every path carries signal.
    for v in decoder.params.iter_mut() {
        if *v == 0.0 {
            *v = rng.random_range(-0.05..0.05);
        }
    }
    let tau = rng.random_range(0.0..1.0);
    let camera = Camera::orbit(rng.random_range(-180.0..180.0), rng.random_range(-30.0..30.0), 32);
    let upstream = random_upstream(32, 32, &mut rng);
    (cloud, field, decoder, tau, camera, upstream)
}

/// Checks HexPlane, decoder and static-position gradients of the full
/// deform-then-render chain against central differences.
pub fn check_deform(
    cloud: &GaussianCloud,
    field: &HexPlaneField,
    decoder: &DeformDecoder,
    tau: f64,
    camera: &Camera,
    upstream: &Image,
) -> Result<GradcheckReport> {
    let bg = rasterizer::WHITE;
    let deformed = hexplane::deform(cloud, field, decoder, tau)?;
    let render_grads = rasterizer::render_backward(&deformed, camera, bg, upstream)?;
    let analytic: DeformGradients = hexplane::query_gradients(
        field,
        decoder,
        cloud,
        tau,
        &hexplane::delta_upstream(&render_grads),
    )?;
    let loss = |c: &GaussianCloud, f: &HexPlaneField, d: &DeformDecoder| -> Result<f64> {
        let deformed = hexplane::deform(c, f, d, tau)?;
        Ok(weighted_sum(&rasterizer::render(&deformed, camera, bg)?.rgb, upstream))
    };

    let mut report = GradcheckReport::default();
    let mut probe = field.clone();
    for p in 0..field.params.len() {
        let original = probe.params[p];
        probe.params[p] = original + FD_STEP;
        let plus = loss(cloud, &probe, decoder)?;
        probe.params[p] = original - FD_STEP;
        let minus = loss(cloud, &probe, decoder)?;
        probe.params[p] = original;
        report.compare(
            || format!("plane param {p}"),
            analytic.planes[p],
            (plus - minus) / (2.0 * FD_STEP),
        );
    }
    let mut probe = decoder.clone();
    for p in 0..decoder.params.len() {
        let original = probe.params[p];
        probe.params[p] = original + FD_STEP;
        let plus = loss(cloud, field, &probe)?;
        probe.params[p] = original - FD_STEP;
        let minus = loss(cloud, field, &probe)?;
        probe.params[p] = original;
        report.compare(
            || format!("decoder param {p}"),
            analytic.decoder[p],
            (plus - minus) / (2.0 * FD_STEP),
        );
    }
    // Static positions feed both the rasterizer directly and the field query.
    let mut probe = cloud.clone();
    for i in 0..cloud.len() {
        for k in 0..3 {
            let original = probe.positions[i][k];
            probe.positions[i][k] = original + FD_STEP;
            let plus = loss(&probe, field, decoder)?;
            probe.positions[i][k] = original - FD_STEP;
            let minus = loss(&probe, field, decoder)?;
            probe.positions[i][k] = original;
            let total = analytic.positions[i][k] + render_grads.positions[i][k];
            report.compare(
                || format!("static position {i}[{k}]"),
                total,
                (plus - minus) / (2.0 * FD_STEP),
            );
        }
    }
    Ok(report)
}

/// Result of the full seeded suite.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub scenes: usize,
    pub rasterizer: GradcheckReport,
    pub deformation: GradcheckReport,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rasterizer.passed() && self.deformation.passed()
    }
}

/// Runs `scenes` random rasterizer cases and as many deformation cases.
pub fn run_suite(seed: u64, scenes: usize) -> Result<SuiteReport> {
    let mut rasterizer = GradcheckReport::default();
    let mut deformation = GradcheckReport::default();
    for s in 0..scenes as u64 {
        let case_seed = crate::math::mix_seed(seed, s, 0);
        let (cloud, camera, upstream) = random_render_case(case_seed);
        rasterizer.merge(check_render(&cloud, &camera, rasterizer::WHITE, &upstream)?);
        let (cloud, field, decoder, tau, camera, upstream) = random_deform_case(case_seed);
        deformation.merge(check_deform(&cloud, &field, &decoder, tau, &camera, &upstream)?);
    }
    Ok(SuiteReport {
        seed,
        scenes,
        rasterizer,
        deformation,
    })
}
