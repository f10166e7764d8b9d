use rand::Rng;

use crate::math::Vec3;

/// Axis pairs of the six planes; axis 3 is time.
pub const PLANES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];
pub const PLANE_NAMES: [&str; 6] = ["xy", "xz", "yz", "xt", "yt", "zt"];

/// Six factorized feature planes over (x, y, z, t).
///
/// Spatial planes are `S×S×F`, space-time planes `S×T×F`. All planes live in
/// `params` back to back, each row-major over `(first axis, second axis, feature)`.
/// Coordinates are clamped to the domain box before lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct HexPlaneField {
    pub spatial_res: usize,
    pub temporal_res: usize,
    pub features: usize,
    pub bounds_min: Vec3,
    pub bounds_max: Vec3,
    pub params: Vec<f64>,
}

/// Interpolation footprint of one plane for one query.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell {
    pub i0: usize,
    pub j0: usize,
    pub fu: f64,
    pub fv: f64,
}

impl HexPlaneField {
    /// Planes filled uniformly in `[0.9, 1.1]` over the default domain `[-1,1]³ × [0,1]`.
    pub fn new<R: Rng + ?Sized>(spatial_res: usize, temporal_res: usize, features: usize, rng: &mut R) -> Self {
        let mut field = Self::filled(spatial_res, temporal_res, features, 1.0);
        for v in field.params.iter_mut() {
            *v = rng.random_range(0.9..1.1);
        }
        field
    }

    pub fn filled(spatial_res: usize, temporal_res: usize, features: usize, value: f64) -> Self {
        assert!(spatial_res >= 2 && temporal_res >= 2, "resolutions must be at least 2");
        assert!(features >= 1);
        let mut field = Self {
            spatial_res,
            temporal_res,
            features,
            bounds_min: [-1.0; 3],
            bounds_max: [1.0; 3],
            params: Vec::new(),
        };
        let total = (0..6).map(|p| field.plane_len(p)).sum();
        field.params = vec![value; total];
        field
    }

    pub fn axis_res(&self, axis: usize) -> usize {
        if axis == 3 {
            self.temporal_res
        } else {
            self.spatial_res
        }
    }

    pub fn plane_dims(&self, plane: usize) -> (usize, usize) {
        let (a, b) = PLANES[plane];
        (self.axis_res(a), self.axis_res(b))
    }

    pub fn plane_len(&self, plane: usize) -> usize {
        let (u, v) = self.plane_dims(plane);
        u * v * self.features
    }

    pub fn plane_offset(&self, plane: usize) -> usize {
        (0..plane).map(|p| self.plane_len(p)).sum()
    }

    pub fn plane(&self, plane: usize) -> &[f64] {
        let off = self.plane_offset(plane);
        &self.params[off..off + self.plane_len(plane)]
    }

    pub fn plane_mut(&mut self, plane: usize) -> &mut [f64] {
        let off = self.plane_offset(plane);
        let len = self.plane_len(plane);
        &mut self.params[off..off + len]
    }

    /// Index of feature 0 at lattice point `(i, j)` of `plane` within `params`.
    pub fn lattice_index(&self, plane: usize, i: usize, j: usize) -> usize {
        let (_, v) = self.plane_dims(plane);
        self.plane_offset(plane) + (i * v + j) * self.features
    }

    /// Continuous lattice coordinate along `axis` and its derivative with
    /// respect to the world coordinate (zero where clamped).
    pub(crate) fn lattice_coord(&self, axis: usize, value: f64) -> (f64, f64) {
        let (lo, hi) = if axis == 3 {
            (0.0, 1.0)
        } else {
            (self.bounds_min[axis], self.bounds_max[axis])
        };
        let scale = (self.axis_res(axis) - 1) as f64 / (hi - lo);
        if value <= lo {
            (0.0, 0.0)
        } else if value >= hi {
            ((self.axis_res(axis) - 1) as f64, 0.0)
        } else {
            ((value - lo) * scale, scale)
        }
    }

    pub(crate) fn cell(&self, plane: usize, u: f64, v: f64) -> Cell {
        let (nu, nv) = self.plane_dims(plane);
        let i0 = (u.floor() as usize).min(nu - 2);
        let j0 = (v.floor() as usize).min(nv - 2);
        Cell {
            i0,
            j0,
            fu: u - i0 as f64,
            fv: v - j0 as f64,
        }
    }

    /// Bilinear lookup of one plane into `out` (length `features`).
    pub(crate) fn interpolate(&self, plane: usize, cell: &Cell, out: &mut [f64]) {
        let f = self.features;
        let (_, nv) = self.plane_dims(plane);
        let base = self.plane_offset(plane);
        let idx = |i: usize, j: usize| base + (i * nv + j) * f;
        let (w00, w01, w10, w11) = (
            (1.0 - cell.fu) * (1.0 - cell.fv),
            (1.0 - cell.fu) * cell.fv,
            cell.fu * (1.0 - cell.fv),
            cell.fu * cell.fv,
        );
        let p00 = &self.params[idx(cell.i0, cell.j0)..idx(cell.i0, cell.j0) + f];
        let p01 = &self.params[idx(cell.i0, cell.j0 + 1)..idx(cell.i0, cell.j0 + 1) + f];
        let p10 = &self.params[idx(cell.i0 + 1, cell.j0)..idx(cell.i0 + 1, cell.j0) + f];
        let p11 = &self.params[idx(cell.i0 + 1, cell.j0 + 1)..idx(cell.i0 + 1, cell.j0 + 1) + f];
        for k in 0..f {
            out[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
        }
    }
}

/// Per-query intermediate values reused by the backward pass.
pub(crate) struct QueryTrace {
    pub coord_scale: [f64; 4],
    pub cells: [Cell; 6],
    /// Six interpolated plane vectors, `6 × features`.
    pub plane_values: Vec<f64>,
}

impl HexPlaneField {
    pub(crate) fn trace(&self, position: Vec3, tau: f64, feature: &mut [f64]) -> QueryTrace {
        let mut coords = [0.0; 4];
        let mut coord_scale = [0.0; 4];
        for axis in 0..4 {
            let value = if axis == 3 { tau } else { position[axis] };
            let (c, s) = self.lattice_coord(axis, value);
            coords[axis] = c;
            coord_scale[axis] = s;
        }
        let f = self.features;
        let mut plane_values = vec![0.0; 6 * f];
        let cells: [Cell; 6] = std::array::from_fn(|p| {
            let (a, b) = PLANES[p];
            self.cell(p, coords[a], coords[b])
        });
        for p in 0..6 {
            self.interpolate(p, &cells[p], &mut plane_values[p * f..(p + 1) * f]);
        }
        for k in 0..f {
            feature[k] = (0..6).map(|p| plane_values[p * f + k]).product();
        }
        QueryTrace {
            coord_scale,
            cells,
            plane_values,
        }
    }

    /// Fused feature at `(position, tau)`: element-wise product of the six
    /// bilinearly interpolated plane vectors.
    pub fn query(&self, position: Vec3, tau: f64) -> Vec<f64> {
        let mut feature = vec![0.0; self.features];
        self.trace(position, tau, &mut feature);
        feature
    }

    /// Accumulates `d_feature` into plane gradients and returns the gradient
    /// with respect to the spatial query coordinates.
    pub(crate) fn backward(&self, trace: &QueryTrace, d_feature: &[f64], d_params: &mut [f64]) -> Vec3 {
        let f = self.features;
        let mut d_coords = [0.0; 4];
        let mut d_plane = vec![0.0; f];
        for p in 0..6 {
            for k in 0..f {
                let mut others = 1.0;
                for q in 0..6 {
                    if q != p {
                        others *= trace.plane_values[q * f + k];
                    }
                }
                d_plane[k] = d_feature[k] * others;
            }
            let cell = &trace.cells[p];
            let (_, nv) = self.plane_dims(p);
            let base = self.plane_offset(p);
            let idx = |i: usize, j: usize| base + (i * nv + j) * f;
            let corners = [
                (cell.i0, cell.j0, (1.0 - cell.fu) * (1.0 - cell.fv)),
                (cell.i0, cell.j0 + 1, (1.0 - cell.fu) * cell.fv),
                (cell.i0 + 1, cell.j0, cell.fu * (1.0 - cell.fv)),
                (cell.i0 + 1, cell.j0 + 1, cell.fu * cell.fv),
            ];
            let mut d_fu = 0.0;
            let mut d_fv = 0.0;
            for (ci, &(i, j, w)) in corners.iter().enumerate() {
                let at = idx(i, j);
                let du_w = match ci {
                    0 => -(1.0 - cell.fv),
                    1 => -cell.fv,
                    2 => 1.0 - cell.fv,
                    _ => cell.fv,
                };
                let dv_w = match ci {
                    0 => -(1.0 - cell.fu),
                    1 => 1.0 - cell.fu,
                    2 => -cell.fu,
                    _ => cell.fu,
                };
                for k in 0..f {
                    d_params[at + k] += w * d_plane[k];
                    let value = self.params[at + k];
                    d_fu += du_w * value * d_plane[k];
                    d_fv += dv_w * value * d_plane[k];
                }
            }
            let (a, b) = PLANES[p];
            d_coords[a] += d_fu;
            d_coords[b] += d_fv;
        }
        [
            d_coords[0] * trace.coord_scale[0],
            d_coords[1] * trace.coord_scale[1],
            d_coords[2] * trace.coord_scale[2],
        ]
    }
}
