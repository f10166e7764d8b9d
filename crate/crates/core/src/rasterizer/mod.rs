//! Differentiable tile-based Gaussian splatting on the CPU.
//!
//! Forward: project every Gaussian (EWA), sort globally by camera depth with
//! ties broken by index, bin into 16×16 tiles, then composite front to back
//! per pixel until transmittance drops below [`TRANSMITTANCE_EPS`].
//!
//! Backward: each tile replays its pixels, walks the contributor list in
//! reverse and accumulates screen-space gradients into a tile-local buffer.
//! Buffers are merged in tile order, so results do not depend on the number
//! of worker threads.
//!
//! The splat footprint is a Gaussian truncated at 3σ with its value and
//! slope shifted to vanish at the cutoff, so the image is C¹ in every
//! parameter and finite differences agree with the analytic gradient.

mod projection;

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussians::GaussianCloud;
use crate::image::Image;
use crate::math::{Quat, Vec3};

pub use projection::{SCREEN_DILATION, SIGMA_CUTOFF};
use projection::{Projector, Splat, SplatGrad};

pub const TILE_SIZE: usize = 16;
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
pub const WHITE: Vec3 = [1.0, 1.0, 1.0];

const CUTOFF_Q: f64 = SIGMA_CUTOFF * SIGMA_CUTOFF;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    pub alpha: Vec<f64>,
    pub contributors: Vec<u32>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }
}

/// Gradients with respect to every Gaussian parameter.
///
/// `screen_ndc` holds the gradient with respect to each projected center in
/// normalized device units; densification statistics read it.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Vec3>,
    pub screen_ndc: Vec<[f64; 2]>,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
            screen_ndc: vec![[0.0; 2]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `self += scale * other`. `screen_ndc` is summed unscaled.
    pub fn add_scaled(&mut self, other: &RenderGradients, scale: f64) {
        for (a, b) in self.positions.iter_mut().zip(&other.positions) {
            for k in 0..3 {
                a[k] += scale * b[k];
            }
        }
        for (a, b) in self.rotations.iter_mut().zip(&other.rotations) {
            for k in 0..4 {
                a[k] += scale * b[k];
            }
        }
        for (a, b) in self.log_scales.iter_mut().zip(&other.log_scales) {
            for k in 0..3 {
                a[k] += scale * b[k];
            }
        }
        for (a, b) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *a += scale * b;
        }
        for (a, b) in self.colors.iter_mut().zip(&other.colors) {
            for k in 0..3 {
                a[k] += scale * b[k];
            }
        }
        for (a, b) in self.screen_ndc.iter_mut().zip(&other.screen_ndc) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }

    /// All parameter gradients flattened in a fixed order (positions,
    /// rotations, log-scales, opacity logits, colors).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 14);
        out.extend(self.positions.iter().flatten());
        out.extend(self.rotations.iter().flatten());
        out.extend(self.log_scales.iter().flatten());
        out.extend(self.opacity_logits.iter());
        out.extend(self.colors.iter().flatten());
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// `exp(-CUTOFF_Q / 2)`.
const KERNEL_FLOOR: f64 = 0.011108996538242306;
const KERNEL_NORM: f64 = 1.0 - KERNEL_FLOOR * (1.0 + 0.5 * CUTOFF_Q);

/// Smoothly truncated Gaussian falloff as a function of squared Mahalanobis
/// distance `q`, normalized to 1 at the center.
#[cfg(test)]
pub(crate) fn kernel(q: f64) -> f64 {
    if q >= CUTOFF_Q {
        return 0.0;
    }
    kernel_from_exp(q, (-0.5 * q).exp())
}

#[cfg(test)]
pub(crate) fn kernel_derivative(q: f64) -> f64 {
    if q >= CUTOFF_Q {
        return 0.0;
    }
    kernel_derivative_from_exp((-0.5 * q).exp())
}

/// Kernel value given `g = exp(-q/2)`, for `q` inside the cutoff.
#[inline]
fn kernel_from_exp(q: f64, g: f64) -> f64 {
    (g - KERNEL_FLOOR * (1.0 + 0.5 * (CUTOFF_Q - q))) / KERNEL_NORM
}

#[inline]
fn kernel_derivative_from_exp(g: f64) -> f64 {
    0.5 * (KERNEL_FLOOR - g) / KERNEL_NORM
}

struct Binned {
    splats: Vec<Splat>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    tiles_y: usize,
}

fn bin(cloud: &GaussianCloud, camera: &Camera, projector: &Projector) -> Binned {
    let mut splats: Vec<Splat> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| projector.project(cloud, i))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
    let tiles_x = camera.width.div_ceil(TILE_SIZE);
    let tiles_y = camera.height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (s, splat) in splats.iter().enumerate() {
        let [x0, y0, x1, y1] = splat.bounds;
        for ty in y0 / TILE_SIZE..=(y1 - 1) / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=(x1 - 1) / TILE_SIZE {
                tiles[ty * tiles_x + tx].push(s as u32);
            }
        }
    }
    Binned {
        splats,
        tiles,
        tiles_x,
        tiles_y,
    }
}

impl Binned {
    fn tile_rect(&self, tile: usize, camera: &Camera) -> [usize; 4] {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        [
            tx * TILE_SIZE,
            ty * TILE_SIZE,
            ((tx + 1) * TILE_SIZE).min(camera.width),
            ((ty + 1) * TILE_SIZE).min(camera.height),
        ]
    }
}

/// The per-pixel part of a splat, packed contiguously per tile.
#[derive(Clone, Copy)]
struct Footprint {
    bounds: [usize; 4],
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: Vec3,
}

impl Footprint {
    fn of(s: &Splat) -> Self {
        Self {
            bounds: s.bounds,
            mean: s.mean,
            conic: s.conic,
            opacity: s.opacity,
            color: s.color,
        }
    }

    /// `(alpha, exp(-q/2), q, dx, dy)` at a pixel center, or `None` outside the cutoff.
    #[inline]
    fn alpha(&self, px: f64, py: f64) -> Option<(f64, f64, f64, f64, f64)> {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let q = self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy;
        if q >= CUTOFF_Q {
            return None;
        }
        let g = (-0.5 * q).exp();
        let alpha = self.opacity * kernel_from_exp(q, g);
        if alpha <= 0.0 {
            return None;
        }
        Some((alpha, g, q, dx, dy))
    }
}

impl Binned {
    fn footprints(&self, tile: usize) -> Vec<Footprint> {
        self.tiles[tile].iter().map(|&s| Footprint::of(&self.splats[s as usize])).collect()
    }
}

/// Side of the blocks a tile is split into for culling; bounds are
/// conservative, so skipping a splat here never changes a pixel.
const BLOCK: usize = 8;

/// The blocks of `rect` with the positions in `list` whose bounds reach each.
fn blocks(rect: [usize; 4], list: &[Footprint]) -> Vec<([usize; 4], Vec<u32>)> {
    let [x0, y0, x1, y1] = rect;
    let mut out = Vec::new();
    for by in (y0..y1).step_by(BLOCK) {
        for bx in (x0..x1).step_by(BLOCK) {
            let r = [bx, by, (bx + BLOCK).min(x1), (by + BLOCK).min(y1)];
            let hits = list
                .iter()
                .enumerate()
                .filter(|(_, f)| f.bounds[0] < r[2] && f.bounds[2] > r[0] && f.bounds[1] < r[3] && f.bounds[3] > r[1])
                .map(|(k, _)| k as u32)
                .collect();
            out.push((r, hits));
        }
    }
    out
}

fn validate(cloud: &GaussianCloud, camera: &Camera) -> Result<()> {
    cloud.check()?;
    camera.validate()
}

/// Renders `cloud` from `camera`, compositing over `background`.
pub fn render(cloud: &GaussianCloud, camera: &Camera, background: Vec3) -> Result<RenderOutput> {
    validate(cloud, camera)?;
    let projector = Projector::new(camera);
    let binned = bin(cloud, camera, &projector);
    let tiles: Vec<(usize, Vec<(Vec3, f64, u32)>)> = (0..binned.tiles_x * binned.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let [x0, y0, x1, y1] = binned.tile_rect(tile, camera);
            let list = binned.footprints(tile);
            let row = x1 - x0;
            let mut out = vec![([0.0; 3], 0.0, 0u32); row * (y1 - y0)];
            for ([bx0, by0, bx1, by1], sub) in blocks([x0, y0, x1, y1], &list) {
                for y in by0..by1 {
                    for x in bx0..bx1 {
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        let mut color = [0.0; 3];
                        let mut transmittance = 1.0;
                        let mut count = 0u32;
                        for &k in &sub {
                            let splat = &list[k as usize];
                            let Some((alpha, ..)) = splat.alpha(px, py) else {
                                continue;
                            };
                            let w = alpha * transmittance;
                            for c in 0..3 {
                                color[c] += splat.color[c] * w;
                            }
                            transmittance *= 1.0 - alpha;
                            count += 1;
                            if transmittance < TRANSMITTANCE_EPS {
                                break;
                            }
                        }
                        for c in 0..3 {
                            color[c] += transmittance * background[c];
                        }
                        out[(y - y0) * row + (x - x0)] = (color, 1.0 - transmittance, count);
                    }
                }
            }
            (tile, out)
        })
        .collect();

    let mut rgb = Image::new(camera.width, camera.height);
    let mut alpha = vec![0.0; camera.width * camera.height];
    let mut contributors = vec![0u32; camera.width * camera.height];
    for (tile, pixels) in tiles {
        let [x0, y0, x1, _] = binned.tile_rect(tile, camera);
        let row = x1 - x0;
        for (k, (c, a, n)) in pixels.into_iter().enumerate() {
            let x = x0 + k % row;
            let y = y0 + k / row;
            rgb.set_pixel(x, y, c);
            alpha[y * camera.width + x] = a;
            contributors[y * camera.width + x] = n;
        }
    }
    Ok(RenderOutput {
        rgb,
        alpha,
        contributors,
    })
}

/// Reverse-mode gradients of `Σ upstream · rgb` with respect to every parameter.
pub fn render_backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: Vec3,
    upstream: &Image,
) -> Result<RenderGradients> {
    validate(cloud, camera)?;
    if upstream.width != camera.width || upstream.height != camera.height {
        return Err(Error::dimension(
            "upstream gradient",
            camera.width * camera.height,
            upstream.width * upstream.height,
        ));
    }
    let projector = Projector::new(camera);
    let binned = bin(cloud, camera, &projector);

    let tile_grads: Vec<Vec<SplatGrad>> = (0..binned.tiles_x * binned.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let list = binned.footprints(tile);
            let mut grads = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return grads;
            }
            let [x0, y0, x1, y1] = binned.tile_rect(tile, camera);
            // (list position, alpha, transmittance before, exp(-q/2), q, dx, dy)
            let mut hits: Vec<(usize, f64, f64, f64, f64, f64, f64)> = Vec::with_capacity(list.len());
            for ([bx0, by0, bx1, by1], sub) in blocks([x0, y0, x1, y1], &list) {
                for y in by0..by1 {
                    for x in bx0..bx1 {
                        let up = upstream.pixel(x, y);
                        if up == [0.0; 3] {
                            continue;
                        }
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        hits.clear();
                        let mut transmittance = 1.0;
                        for &k in &sub {
                            let k = k as usize;
                            let Some((alpha, g, q, dx, dy)) = list[k].alpha(px, py) else {
                                continue;
                            };
                            hits.push((k, alpha, transmittance, g, q, dx, dy));
                            transmittance *= 1.0 - alpha;
                            if transmittance < TRANSMITTANCE_EPS {
                                break;
                            }
                        }
                        // Color composited behind the current splat, per unit transmittance.
                        let mut behind = background;
                        for &(k, alpha, t_before, e, q, dx, dy) in hits.iter().rev() {
                            let splat = &list[k];
                            let g = &mut grads[k];
                            let mut d_alpha = 0.0;
                            for c in 0..3 {
                                d_alpha += up[c] * t_before * (splat.color[c] - behind[c]);
                                g.color[c] += up[c] * alpha * t_before;
                                behind[c] = splat.color[c] * alpha + (1.0 - alpha) * behind[c];
                            }
                            g.opacity += d_alpha * kernel_from_exp(q, e);
                            let d_q = d_alpha * splat.opacity * kernel_derivative_from_exp(e);
                            let (a, b, cc) = (splat.conic[0], splat.conic[1], splat.conic[2]);
                            g.mean[0] += d_q * -2.0 * (a * dx + b * dy);
                            g.mean[1] += d_q * -2.0 * (b * dx + cc * dy);
                            g.conic[0] += d_q * dx * dx;
                            g.conic[1] += d_q * dx * dy;
                            g.conic[2] += d_q * dy * dy;
                        }
                    }
                }
            }
            grads
        })
        .collect();

    let mut per_splat = vec![SplatGrad::default(); binned.splats.len()];
    for (tile, grads) in tile_grads.iter().enumerate() {
        for (k, g) in grads.iter().enumerate() {
            per_splat[binned.tiles[tile][k] as usize].add(g);
        }
    }

    let param_grads: Vec<_> = binned
        .splats
        .par_iter()
        .zip(per_splat.par_iter())
        .map(|(splat, g)| (splat.id, projector.backward(cloud, splat.id, g)))
        .collect();

    let mut out = RenderGradients::zeros(cloud.len());
    for (id, g) in param_grads {
        out.positions[id] = g.position;
        out.rotations[id] = g.rotation;
        out.log_scales[id] = g.log_scale;
        out.opacity_logits[id] = g.opacity_logit;
        out.colors[id] = g.color;
        out.screen_ndc[id] = g.screen_ndc;
    }
    Ok(out)
}

/// Renders each camera independently; output order follows `cameras`.
pub fn render_views(
    cloud: &GaussianCloud,
    cameras: &[Camera],
    background: Vec3,
) -> Result<Vec<RenderOutput>> {
    cameras
        .par_iter()
        .map(|cam| render(cloud, cam, background))
        .collect()
}
