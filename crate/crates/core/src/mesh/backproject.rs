//! Painting texels from multi-view renders.

use std::collections::VecDeque;

use rayon::prelude::*;

use super::raster::{project_vertices, rasterize_faces};
use super::{TriMesh, UvLayout};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::guidance::StaticScene;
use crate::image::Image;
use crate::math::{dot3, normalize3, sub3, Vec3};
use crate::rasterizer::render;

/// Anything that can be rendered to color plus coverage over a known background.
pub trait RgbaSource: Sync {
    fn render_rgba(&self, camera: &Camera) -> Result<(Image, Vec<f64>)>;
    fn background(&self) -> Vec3;
}

impl RgbaSource for StaticScene {
    fn render_rgba(&self, camera: &Camera) -> Result<(Image, Vec<f64>)> {
        let out = render(&self.cloud, camera, self.background)?;
        Ok((out.rgb, out.alpha))
    }

    fn background(&self) -> Vec3 {
        self.background
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackprojectOptions {
    /// A texel counts as visible when its depth is within this distance of
    /// the mesh depth buffer.
    pub depth_tolerance: f64,
    /// Samples with less coverage are ignored.
    pub min_alpha: f64,
}

impl Default for BackprojectOptions {
    fn default() -> Self {
        Self {
            depth_tolerance: 0.02,
            min_alpha: 1e-3,
        }
    }
}

/// Eight azimuths at each of two elevations (±30°).
pub fn default_backprojection_views(size: usize) -> Vec<Camera> {
    let mut views = Vec::with_capacity(16);
    for el in [-30.0, 30.0] {
        for k in 0..8 {
            views.push(Camera::orbit(-180.0 + 45.0 * k as f64, el, size));
        }
    }
    views
}

fn bilinear(values: &[f64], width: usize, height: usize, channels: usize, p: [f64; 2], out: &mut [f64]) {
    let fx = (p[0] - 0.5).clamp(0.0, (width - 1) as f64);
    let fy = (p[1] - 0.5).clamp(0.0, (height - 1) as f64);
    let x0 = (fx.floor() as usize).min(width.saturating_sub(2));
    let y0 = (fy.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    for c in 0..channels {
        let at = |x: usize, y: usize| values[(y * width + x) * channels + c];
        out[c] = (1.0 - ty) * ((1.0 - tx) * at(x0, y0) + tx * at(x1, y0)) + ty * ((1.0 - tx) * at(x0, y1) + tx * at(x1, y1));
    }
}

/// Texture for `mesh` painted from `source` seen through `views`.
///
/// Every covered texel averages the un-composited colors of the views that
/// see it, weighted by coverage times the cosine between the face normal and
/// the direction to the camera. Texels no view reaches take the color of the
/// nearest painted texel.
pub fn backproject_colors(
    mesh: &TriMesh,
    layout: &UvLayout,
    source: &dyn RgbaSource,
    views: &[Camera],
    options: &BackprojectOptions,
) -> Result<Image> {
    if layout.faces.len() != mesh.faces.len() {
        return Err(Error::dimension("uv faces", mesh.faces.len(), layout.faces.len()));
    }
    let size = layout.texture_size;
    let bg = source.background();
    let cover = layout.texel_faces();
    let texels: Vec<(usize, Vec3, Vec3)> = cover
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let (f, w) = (*c)?;
            let [a, b, cc] = mesh.corners(f as usize);
            let p = std::array::from_fn(|k| w[0] * a[k] + w[1] * b[k] + w[2] * cc[k]);
            Some((i, p, mesh.face_normal(f as usize)))
        })
        .collect();
    let mut acc = vec![[0.0f64; 4]; size * size];

    for cam in views {
        cam.validate()?;
        let (rgb, alpha) = source.render_rgba(cam)?;
        let (w, h) = (cam.width, cam.height);
        let mut zbuf = vec![f64::INFINITY; w * h];
        let projected = project_vertices(&mesh.vertices, cam);
        rasterize_faces(mesh, &projected, w, h, |_, pix, depth, _| {
            if depth < zbuf[pix] {
                zbuf[pix] = depth;
            }
        });
        let center = cam.position();
        let footprint = 1.0 / cam.intrinsics().fy;
        let proj = project_vertices(&texels.iter().map(|t| t.1).collect::<Vec<_>>(), cam);
        let samples: Vec<Option<(usize, [f64; 3], f64)>> = texels
            .par_iter()
            .zip(&proj)
            .map(|(&(i, p, n), pr)| {
                let (px, depth) = (*pr)?;
                if px[0] < 0.0 || px[1] < 0.0 || px[0] >= w as f64 || px[1] >= h as f64 {
                    return None;
                }
                let pix = px[1] as usize * w + px[0] as usize;
                let to_cam = normalize3(sub3(center, p));
                let cos = dot3(n, to_cam);
                if cos <= 0.0 {
                    return None;
                }
                // The depth buffer holds the pixel-center depth; on slanted
                // faces it differs from the texel's by up to a pixel's slope.
                let slope = footprint * depth * (1.0 - cos * cos).sqrt() / cos;
                if depth > zbuf[pix] + options.depth_tolerance + slope {
                    return None;
                }
                let mut a = [0.0];
                bilinear(&alpha, w, h, 1, px, &mut a);
                if a[0] < options.min_alpha {
                    return None;
                }
                let mut c = [0.0; 3];
                bilinear(&rgb.data, w, h, 3, px, &mut c);
                let color = std::array::from_fn(|k| ((c[k] - (1.0 - a[0]) * bg[k]) / a[0]).clamp(0.0, 1.0));
                Some((i, color, cos * a[0]))
            })
            .collect();
        for (i, color, weight) in samples.into_iter().flatten() {
            for k in 0..3 {
                acc[i][k] += weight * color[k];
            }
            acc[i][3] += weight;
        }
    }

    let mut texture = Image::new(size, size);
    let mut filled = vec![false; size * size];
    let mut queue = VecDeque::new();
    for (i, a) in acc.iter().enumerate() {
        if a[3] > 0.0 {
            for k in 0..3 {
                texture.data[i * 3 + k] = a[k] / a[3];
            }
            filled[i] = true;
            queue.push_back(i);
        }
    }
    if queue.is_empty() {
        return Ok(Image::filled(size, size, bg));
    }
    dilate(&mut texture, &mut filled, queue);
    Ok(texture)
}

/// Multi-source breadth-first fill: every empty texel copies the texel that
/// reached it first.
pub(crate) fn dilate(texture: &mut Image, filled: &mut [bool], mut queue: VecDeque<usize>) {
    let size = texture.width;
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % size, i / size);
        let neighbors = [
            (x > 0).then(|| i - 1),
            (x + 1 < size).then(|| i + 1),
            (y > 0).then(|| i - size),
            (y + 1 < size).then(|| i + size),
        ];
        for j in neighbors.into_iter().flatten() {
            if !filled[j] {
                filled[j] = true;
                let c: [f64; 3] = std::array::from_fn(|k| texture.data[i * 3 + k]);
                texture.data[j * 3..j * 3 + 3].copy_from_slice(&c);
                queue.push_back(j);
            }
        }
    }
}
