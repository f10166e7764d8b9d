//! Z-buffered rasterization of textured triangle meshes with gradients
//! flowing to texels only.

use super::uv::barycentric;
use super::{TriMesh, UvLayout};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;

/// Marks pixels not covered by any face.
pub const NO_FACE: u32 = u32::MAX;

/// A mesh render plus what the backward pass and back-projection need.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshRender {
    pub rgb: Image,
    pub face: Vec<u32>,
    pub depth: Vec<f64>,
    /// Texel-space lookup position per covered pixel.
    pub texel: Vec<[f64; 2]>,
}

/// Bilinear taps (flat texel index, weight) at texel-space position `p`
/// with texel centers at `i + 0.5` and clamp-to-edge addressing.
pub(crate) fn bilinear_taps(size: usize, p: [f64; 2]) -> [(usize, f64); 4] {
    let max = (size - 1) as f64;
    let fx = (p[0] - 0.5).clamp(0.0, max);
    let fy = (p[1] - 0.5).clamp(0.0, max);
    let x0 = (fx.floor() as usize).min(size.saturating_sub(2));
    let y0 = (fy.floor() as usize).min(size.saturating_sub(2));
    let x1 = (x0 + 1).min(size - 1);
    let y1 = (y0 + 1).min(size - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    [
        (y0 * size + x0, (1.0 - tx) * (1.0 - ty)),
        (y0 * size + x1, tx * (1.0 - ty)),
        (y1 * size + x0, (1.0 - tx) * ty),
        (y1 * size + x1, tx * ty),
    ]
}

pub(crate) fn sample_texture(texture: &Image, p: [f64; 2]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, w) in bilinear_taps(texture.width, p) {
        for c in 0..3 {
            out[c] += w * texture.data[i * 3 + c];
        }
    }
    out
}

/// Screen-space projection of every vertex: pixel position and depth.
pub(crate) fn project_vertices(vertices: &[Vec3], camera: &Camera) -> Vec<Option<([f64; 2], f64)>> {
    let view = camera.view();
    let k = camera.intrinsics();
    vertices
        .iter()
        .map(|&p| {
            let t = view.to_camera(p);
            (t[2] > camera.near).then(|| ([k.fx * t[0] / t[2] + k.cx, k.fy * t[1] / t[2] + k.cy], t[2]))
        })
        .collect()
}

/// Visits each pixel center inside face `f`'s projection with perspective-
/// correct barycentrics and depth. Faces crossing the near plane are skipped.
pub(crate) fn rasterize_faces(
    mesh: &TriMesh,
    projected: &[Option<([f64; 2], f64)>],
    width: usize,
    height: usize,
    mut visit: impl FnMut(usize, usize, f64, [f64; 3]),
) {
    for (f, face) in mesh.faces.iter().enumerate() {
        let (Some(a), Some(b), Some(c)) = (
            projected[face[0] as usize],
            projected[face[1] as usize],
            projected[face[2] as usize],
        ) else {
            continue;
        };
        let tri = [a.0, b.0, c.0];
        let inv_z = [1.0 / a.1, 1.0 / b.1, 1.0 / c.1];
        let lo = |k: usize| tri.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| tri.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (lo(0) - 0.5).ceil().max(0.0) as usize;
        let y0 = (lo(1) - 0.5).ceil().max(0.0) as usize;
        let x1 = ((hi(0) - 0.5).floor().min(width as f64 - 1.0)) as isize;
        let y1 = ((hi(1) - 0.5).floor().min(height as f64 - 1.0)) as isize;
        if x1 < x0 as isize || y1 < y0 as isize {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let Some(w) = barycentric(&tri, [x as f64 + 0.5, y as f64 + 0.5]) else {
                    continue;
                };
                if w.iter().any(|&v| v < -1e-12) {
                    continue;
                }
                let pw = [w[0] * inv_z[0], w[1] * inv_z[1], w[2] * inv_z[2]];
                let sum = pw[0] + pw[1] + pw[2];
                visit(f, y * width + x, 1.0 / sum, [pw[0] / sum, pw[1] / sum, pw[2] / sum]);
            }
        }
    }
}

/// Renders `mesh` with `texture` looked up through `layout`, unlit, over
/// `background`. Nearest depth wins; exact ties keep the lower face index.
pub fn render_mesh(
    mesh: &TriMesh,
    layout: &UvLayout,
    texture: &Image,
    camera: &Camera,
    background: Vec3,
) -> Result<MeshRender> {
    camera.validate()?;
    if layout.faces.len() != mesh.faces.len() {
        return Err(Error::dimension("uv faces", mesh.faces.len(), layout.faces.len()));
    }
    if texture.width != layout.texture_size || texture.height != layout.texture_size {
        return Err(Error::dimension("texture side", layout.texture_size, texture.width));
    }
    let (w, h) = (camera.width, camera.height);
    let mut out = MeshRender {
        rgb: Image::filled(w, h, background),
        face: vec![NO_FACE; w * h],
        depth: vec![f64::INFINITY; w * h],
        texel: vec![[0.0; 2]; w * h],
    };
    let projected = project_vertices(&mesh.vertices, camera);
    let uv_tris: Vec<[[f64; 2]; 3]> = (0..mesh.faces.len()).map(|f| layout.texel_triangle(f)).collect();
    rasterize_faces(mesh, &projected, w, h, |f, pix, depth, bary| {
        if depth < out.depth[pix] {
            out.depth[pix] = depth;
            out.face[pix] = f as u32;
            let t = &uv_tris[f];
            out.texel[pix] = [
                bary[0] * t[0][0] + bary[1] * t[1][0] + bary[2] * t[2][0],
                bary[0] * t[0][1] + bary[1] * t[1][1] + bary[2] * t[2][1],
            ];
        }
    });
    for pix in 0..w * h {
        if out.face[pix] != NO_FACE {
            let c = sample_texture(texture, out.texel[pix]);
            out.rgb.data[pix * 3..pix * 3 + 3].copy_from_slice(&c);
        }
    }
    Ok(out)
}

/// Gradient of `Σ upstream · rgb` with respect to the texture, as an image
/// of the texture's size. Pixels are visited in order, so the result is
/// deterministic.
pub fn render_mesh_backward(render: &MeshRender, texture_size: usize, upstream: &Image) -> Result<Image> {
    render.rgb.check_shape(upstream, "mesh upstream gradient")?;
    let mut grad = Image::new(texture_size, texture_size);
    for (pix, &f) in render.face.iter().enumerate() {
        if f == NO_FACE {
            continue;
        }
        let g = &upstream.data[pix * 3..pix * 3 + 3];
        for (i, w) in bilinear_taps(texture_size, render.texel[pix]) {
            for c in 0..3 {
                grad.data[i * 3 + c] += w * g[c];
            }
        }
    }
    Ok(grad)
}
