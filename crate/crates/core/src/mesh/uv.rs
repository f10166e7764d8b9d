//! Chart-based UV atlas: faces grouped by dominant normal axis, projected
//! onto that axis' plane, and shelf-packed with gutters.

use std::collections::{HashMap, VecDeque};

use super::TriMesh;

/// Texels left empty around every chart.
pub const GUTTER: f64 = 4.0;

/// Per-corner UV coordinates for a mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UvLayout {
    pub uvs: Vec<[f64; 2]>,
    /// Indices into `uvs`, parallel to the mesh faces.
    pub faces: Vec<[u32; 3]>,
    pub charts: usize,
    /// Zero-area faces, left out of every chart.
    pub skipped: Vec<usize>,
    pub texture_size: usize,
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Barycentric coordinates of `p` in triangle `t`, if the triangle is non-degenerate.
pub(crate) fn barycentric(t: &[[f64; 2]; 3], p: [f64; 2]) -> Option<[f64; 3]> {
    let area = cross2(t[0], t[1], t[2]);
    if area.abs() < 1e-300 {
        return None;
    }
    let w0 = cross2(t[1], t[2], p) / area;
    let w1 = cross2(t[2], t[0], p) / area;
    Some([w0, w1, 1.0 - w0 - w1])
}

/// True when the interiors of two triangles overlap (touching is allowed).
fn triangles_overlap(a: &[[f64; 2]; 3], b: &[[f64; 2]; 3], eps: f64) -> bool {
    for tri in [a, b] {
        for k in 0..3 {
            let (p, q) = (tri[k], tri[(k + 1) % 3]);
            let axis = [q[1] - p[1], p[0] - q[0]];
            let len = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
            if len == 0.0 {
                continue;
            }
            let proj = |t: &[[f64; 2]; 3]| {
                let v: Vec<f64> = t.iter().map(|c| (c[0] * axis[0] + c[1] * axis[1]) / len).collect();
                (v[0].min(v[1]).min(v[2]), v[0].max(v[1]).max(v[2]))
            };
            let (a0, a1) = proj(a);
            let (b0, b1) = proj(b);
            if a1 <= b0 + eps || b1 <= a0 + eps {
                return false;
            }
        }
    }
    true
}

/// Uniform-grid index of chart triangles for overlap queries.
struct ChartIndex {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    tris: Vec<[[f64; 2]; 3]>,
}

impl ChartIndex {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: HashMap::new(),
            tris: Vec::new(),
        }
    }

    fn range(&self, t: &[[f64; 2]; 3]) -> (i64, i64, i64, i64) {
        let lo = |k: usize| t.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| t.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
        (
            (lo(0) / self.cell).floor() as i64,
            (hi(0) / self.cell).floor() as i64,
            (lo(1) / self.cell).floor() as i64,
            (hi(1) / self.cell).floor() as i64,
        )
    }

    fn overlaps(&self, t: &[[f64; 2]; 3]) -> bool {
        let (x0, x1, y0, y1) = self.range(t);
        let eps = self.cell * 1e-9;
        for x in x0..=x1 {
            for y in y0..=y1 {
                if let Some(list) = self.cells.get(&(x, y)) {
                    if list.iter().any(|&i| triangles_overlap(&self.tris[i], t, eps)) {
                        return true;
                    }
                }
            }
        }
        false
    }

    fn insert(&mut self, t: [[f64; 2]; 3]) {
        let (x0, x1, y0, y1) = self.range(&t);
        let id = self.tris.len();
        self.tris.push(t);
        for x in x0..=x1 {
            for y in y0..=y1 {
                self.cells.entry((x, y)).or_default().push(id);
            }
        }
    }
}

/// Projection onto the plane of the dominant axis; orientation-preserving
/// for faces whose normal points along `+axis` (or `−axis` when `negative`).
fn project(p: [f64; 3], axis: usize, negative: bool) -> [f64; 2] {
    let (a, b) = match axis {
        0 => (p[1], p[2]),
        1 => (p[2], p[0]),
        _ => (p[0], p[1]),
    };
    if negative {
        [-a, b]
    } else {
        [a, b]
    }
}

struct Chart {
    faces: Vec<usize>,
    cluster: usize,
    min: [f64; 2],
    max: [f64; 2],
}

/// Shelf-packs `sizes` (texels, gutters included) into a `side`² square.
fn shelf_pack(sizes: &[(f64, f64)], order: &[usize], side: f64) -> Option<Vec<[f64; 2]>> {
    let mut pos = vec![[0.0; 2]; sizes.len()];
    let (mut x, mut y, mut shelf) = (GUTTER, GUTTER, 0.0f64);
    for &i in order {
        let (w, h) = sizes[i];
        if x + w > side {
            x = GUTTER;
            y += shelf;
            shelf = 0.0;
        }
        if x + w > side || y + h > side {
            return None;
        }
        pos[i] = [x, y];
        x += w;
        shelf = shelf.max(h);
    }
    Some(pos)
}

/// Builds charts and packs them into a `texture_size`² atlas.
pub fn unwrap_uv(mesh: &TriMesh, texture_size: usize) -> UvLayout {
    let nf = mesh.faces.len();
    let mut layout = UvLayout {
        faces: vec![[0; 3]; nf],
        texture_size,
        ..UvLayout::default()
    };
    let mut cluster = vec![usize::MAX; nf];
    let mut total_area = 0.0;
    for f in 0..nf {
        let area = mesh.face_area(f);
        if !(area > 1e-14) {
            layout.skipped.push(f);
            continue;
        }
        total_area += area;
        let n = mesh.face_cross(f);
        let axis = (0..3).max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs())).expect("three axes");
        cluster[f] = axis * 2 + usize::from(n[axis] < 0.0);
    }
    let mut edge_faces: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let live = nf - layout.skipped.len();
    let cell = if live > 0 { (2.0 * total_area / live as f64).sqrt().max(1e-9) } else { 1.0 };

    let mut chart_of = vec![usize::MAX; nf];
    let mut charts: Vec<Chart> = Vec::new();
    for seed in 0..nf {
        if cluster[seed] == usize::MAX || chart_of[seed] != usize::MAX {
            continue;
        }
        let c = cluster[seed];
        let (axis, negative) = (c / 2, c % 2 == 1);
        let id = charts.len();
        let mut index = ChartIndex::new(cell);
        let mut faces = Vec::new();
        let mut queue = VecDeque::from([seed]);
        let mut queued = HashMap::from([(seed, ())]);
        while let Some(f) = queue.pop_front() {
            let tri = mesh.corners(f).map(|p| project(p, axis, negative));
            if index.overlaps(&tri) {
                continue;
            }
            index.insert(tri);
            chart_of[f] = id;
            faces.push(f);
            let face = mesh.faces[f];
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                for &g in &edge_faces[&(a.min(b), a.max(b))] {
                    if cluster[g] == c && chart_of[g] == usize::MAX && !queued.contains_key(&g) {
                        queued.insert(g, ());
                        queue.push_back(g);
                    }
                }
            }
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for t in &index.tris {
            for p in t {
                for k in 0..2 {
                    min[k] = min[k].min(p[k]);
                    max[k] = max[k].max(p[k]);
                }
            }
        }
        charts.push(Chart {
            faces,
            cluster: c,
            min,
            max,
        });
    }
    layout.charts = charts.len();
    if charts.is_empty() {
        return layout;
    }

    // Largest uniform scale (texels per world unit) at which all charts fit.
    let side = texture_size as f64;
    let rects = |s: f64| -> Vec<(f64, f64)> {
        charts
            .iter()
            .map(|c| ((c.max[0] - c.min[0]) * s + 1.0 + GUTTER, (c.max[1] - c.min[1]) * s + 1.0 + GUTTER))
            .map(|(w, h)| (w.ceil(), h.ceil()))
            .collect()
    };
    let mut order: Vec<usize> = (0..charts.len()).collect();
    let extent = charts
        .iter()
        .map(|c| (c.max[0] - c.min[0]).max(c.max[1] - c.min[1]))
        .fold(0.0, f64::max)
        .max(1e-12);
    let (mut lo, mut hi) = (0.0, side / extent);
    let mut best = None;
    for _ in 0..50 {
        let s = 0.5 * (lo + hi);
        let sizes = rects(s);
        order.sort_by(|&a, &b| sizes[b].1.total_cmp(&sizes[a].1).then(a.cmp(&b)));
        match shelf_pack(&sizes, &order, side) {
            Some(pos) => {
                best = Some((s, pos));
                lo = s;
            }
            None => hi = s,
        }
    }
    let (scale, pos) = best.unwrap_or_else(|| {
        // Degenerate fallback: everything collapses onto its own texel offset.
        (0.0, vec![[GUTTER; 2]; charts.len()])
    });

    for (ci, chart) in charts.iter().enumerate() {
        let (axis, negative) = (chart.cluster / 2, chart.cluster % 2 == 1);
        let mut local: HashMap<u32, u32> = HashMap::new();
        for &f in &chart.faces {
            let face = mesh.faces[f];
            for k in 0..3 {
                let v = face[k];
                let uv_index = *local.entry(v).or_insert_with(|| {
                    let p = project(mesh.vertices[v as usize], axis, negative);
                    let tx = pos[ci][0] + 0.5 + (p[0] - chart.min[0]) * scale;
                    let ty = pos[ci][1] + 0.5 + (p[1] - chart.min[1]) * scale;
                    layout.uvs.push([tx / side, 1.0 - ty / side]);
                    (layout.uvs.len() - 1) as u32
                });
                layout.faces[f][k] = uv_index;
            }
        }
    }
    if !layout.skipped.is_empty() {
        layout.uvs.push([0.0, 0.0]);
        let z = (layout.uvs.len() - 1) as u32;
        for &f in &layout.skipped {
            layout.faces[f] = [z; 3];
        }
    }
    layout
}

impl UvLayout {
    /// UV triangle of face `f` in texel coordinates (y down).
    pub fn texel_triangle(&self, f: usize) -> [[f64; 2]; 3] {
        let s = self.texture_size as f64;
        self.faces[f].map(|i| {
            let uv = self.uvs[i as usize];
            [uv[0] * s, (1.0 - uv[1]) * s]
        })
    }

    /// For every texel center, the first face covering it and the
    /// barycentric coordinates there.
    pub fn texel_faces(&self) -> Vec<Option<(u32, [f64; 3])>> {
        let s = self.texture_size;
        let mut out = vec![None; s * s];
        let skipped: std::collections::HashSet<usize> = self.skipped.iter().copied().collect();
        for f in 0..self.faces.len() {
            if skipped.contains(&f) {
                continue;
            }
            let t = self.texel_triangle(f);
            let x0 = t.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let x1 = (t.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(s);
            let y0 = t.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let y1 = (t.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(s);
            for y in y0..y1 {
                for x in x0..x1 {
                    if out[y * s + x].is_some() {
                        continue;
                    }
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    if let Some(w) = barycentric(&t, p) {
                        if w.iter().all(|&v| v >= -1e-9) {
                            out[y * s + x] = Some((f as u32, w));
                        }
                    }
                }
            }
        }
        out
    }

    /// Fraction of texels whose centers fall inside some UV triangle.
    pub fn utilization(&self) -> f64 {
        let cover = self.texel_faces();
        cover.iter().filter(|c| c.is_some()).count() as f64 / cover.len().max(1) as f64
    }

    /// Largest number of UV triangles strictly containing any texel center.
    pub fn max_overlap(&self) -> usize {
        let s = self.texture_size;
        let mut count = vec![0usize; s * s];
        for f in 0..self.faces.len() {
            if self.skipped.contains(&f) {
                continue;
            }
            let t = self.texel_triangle(f);
            for y in 0..s {
                for x in 0..s {
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    if let Some(w) = barycentric(&t, p) {
                        if w.iter().all(|&v| v > 1e-9) {
                            count[y * s + x] += 1;
                        }
                    }
                }
            }
        }
        count.into_iter().max().unwrap_or(0)
    }
}
