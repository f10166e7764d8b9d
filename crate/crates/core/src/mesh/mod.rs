//! Mesh export: density grids, marching cubes, UV atlases, texture
//! back-projection, and video-to-video texture refinement.

mod backproject;
mod marching;
mod obj;
mod raster;
mod refine;
mod sequence;
mod uv;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backproject::{backproject_colors, default_backprojection_views, BackprojectOptions, RgbaSource};
pub use marching::marching_cubes;
pub use obj::{encode_obj, frame_name, read_obj, read_sequence, write_sequence, ObjMesh};
pub use raster::{render_mesh, render_mesh_backward, MeshRender, NO_FACE};
pub use refine::{
    refine_textures, texel_variance_across_frames, MeshScene, OrbitTrajectory, RefineMode, RefineOptions, RefineReport,
};
pub use sequence::{extract_sequence, ExtractOptions, MeshFrame, TexturedMeshSequence};
pub use uv::{unwrap_uv, UvLayout};

use crate::gaussians::GaussianCloud;
use crate::math::{cross3, dot3, inverse3, mat_vec, norm3, sub3, Vec3};

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn corners(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalized face normal (twice the area in length).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.corners(f);
        cross3(sub3(b, a), sub3(c, a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * norm3(self.face_cross(f))
    }

    /// Unit face normal, or zero for degenerate faces.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let n = self.face_cross(f);
        let len = norm3(n);
        if len > 0.0 {
            [n[0] / len, n[1] / len, n[2] / len]
        } else {
            [0.0; 3]
        }
    }

    /// True when every undirected edge is shared by exactly two faces.
    pub fn is_two_manifold(&self) -> bool {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !count.is_empty() && count.values().all(|&c| c == 2)
    }

    /// Fraction of faces whose normal flipped relative to `reference`
    /// (same topology, different vertex positions).
    pub fn flipped_fraction(&self, reference: &TriMesh) -> f64 {
        if self.faces.is_empty() {
            return 0.0;
        }
        let flipped = (0..self.faces.len())
            .filter(|&f| dot3(self.face_cross(f), reference.face_cross(f)) < 0.0)
            .count();
        flipped as f64 / self.faces.len() as f64
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }
}

/// Scalar samples at the centers of a `G³` voxel grid over `bounds`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub resolution: [usize; 3],
    pub bounds: Bounds,
    /// x-fastest, then y, then z.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn zeros(resolution: usize, bounds: Bounds) -> Self {
        Self {
            resolution: [resolution; 3],
            bounds,
            values: vec![0.0; resolution * resolution * resolution],
        }
    }

    /// Samples `f` at every voxel center.
    pub fn from_fn(resolution: usize, bounds: Bounds, f: impl Fn(Vec3) -> f64 + Sync) -> Self {
        let mut grid = Self::zeros(resolution, bounds);
        let r = resolution;
        let points: Vec<Vec3> = (0..r * r * r).map(|i| grid.point(i % r, (i / r) % r, i / (r * r))).collect();
        grid.values = points.par_iter().map(|&p| f(p)).collect();
        grid
    }

    pub fn voxel_size(&self) -> Vec3 {
        std::array::from_fn(|k| (self.bounds.max[k] - self.bounds.min[k]) / self.resolution[k] as f64)
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution[0] * (y + self.resolution[1] * z)
    }

    pub fn value(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.index(x, y, z)]
    }

    /// World position of voxel center `(x, y, z)`.
    pub fn point(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let h = self.voxel_size();
        let idx = [x, y, z];
        std::array::from_fn(|k| self.bounds.min[k] + (idx[k] as f64 + 0.5) * h[k])
    }
}

/// Accumulated opacity density: every voxel center receives
/// `sigmoid(opacity)·exp(−½ dᵀΣ⁻¹d)` from each Gaussian within Mahalanobis
/// distance 3. Slices are filled in parallel; each sums Gaussians in index
/// order, so the result is deterministic.
pub fn build_density_grid(cloud: &GaussianCloud, resolution: usize, bounds: Bounds) -> DensityGrid {
    let mut grid = DensityGrid::zeros(resolution, bounds);
    let h = grid.voxel_size();
    struct Blob {
        center: Vec3,
        inv: [[f64; 3]; 3],
        opacity: f64,
        lo: [usize; 3],
        hi: [usize; 3],
    }
    let r = resolution as isize;
    let blobs: Vec<Blob> = (0..cloud.len())
        .filter_map(|i| {
            let cov = cloud.covariance(i);
            let inv = inverse3(&cov)?;
            let c = cloud.positions[i];
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for k in 0..3 {
                let reach = 3.0 * cov[k][k].sqrt();
                let a = ((c[k] - reach - bounds.min[k]) / h[k] - 0.5).ceil() as isize;
                let b = ((c[k] + reach - bounds.min[k]) / h[k] - 0.5).floor() as isize;
                if b < 0 || a >= r || a > b {
                    return None;
                }
                lo[k] = a.max(0) as usize;
                hi[k] = b.min(r - 1) as usize;
            }
            Some(Blob {
                center: c,
                inv,
                opacity: cloud.opacity(i),
                lo,
                hi,
            })
        })
        .collect();
    let slice = resolution * resolution;
    let template = grid.clone();
    grid.values.par_chunks_mut(slice).enumerate().for_each(|(z, out)| {
        for b in blobs.iter().filter(|b| b.lo[2] <= z && z <= b.hi[2]) {
            for y in b.lo[1]..=b.hi[1] {
                for x in b.lo[0]..=b.hi[0] {
                    let d = sub3(template.point(x, y, z), b.center);
                    let q = dot3(d, mat_vec(&b.inv, d));
                    if q <= 9.0 {
                        out[x + resolution * y] += b.opacity * (-0.5 * q).exp();
                    }
                }
            }
        }
    });
    grid
}
