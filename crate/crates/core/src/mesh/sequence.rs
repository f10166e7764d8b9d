use super::backproject::{backproject_colors, BackprojectOptions, RgbaSource};
use super::{build_density_grid, marching_cubes, unwrap_uv, Bounds, TriMesh, UvLayout};
use crate::camera::Camera;
use crate::error::Result;
use crate::gaussians::GaussianCloud;
use crate::guidance::StaticScene;
use crate::hexplane::{deform, displace_points, DeformDecoder, HexPlaneField};
use crate::image::Image;
use crate::math::Vec3;

/// One time step: geometry, its UV layout, and which texture it uses.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshFrame {
    pub mesh: TriMesh,
    pub uv: UvLayout,
    pub texture: usize,
    pub time: f64,
}

/// Per-frame meshes over a shared pool of textures. Frames that keep the
/// reference topology share texture 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TexturedMeshSequence {
    pub frames: Vec<MeshFrame>,
    pub textures: Vec<Image>,
}

impl TexturedMeshSequence {
    pub fn texture_of(&self, frame: usize) -> &Image {
        &self.textures[self.frames[frame].texture]
    }

    /// Gives every frame its own copy of its texture.
    pub fn untie_textures(&mut self) {
        let mut textures = Vec::with_capacity(self.frames.len());
        for (k, frame) in self.frames.iter_mut().enumerate() {
            textures.push(self.textures[frame.texture].clone());
            frame.texture = k;
        }
        self.textures = textures;
    }
}

/// Settings for turning a deformable cloud into a mesh sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractOptions {
    pub grid_resolution: usize,
    pub iso: f64,
    pub bounds: Bounds,
    pub texture_size: usize,
    pub views: Vec<Camera>,
    pub background: Vec3,
    /// Advected frames with more flipped faces than this are re-extracted.
    pub max_flipped: f64,
    pub backproject: BackprojectOptions,
}

fn extract(cloud: &GaussianCloud, opts: &ExtractOptions) -> Result<(TriMesh, UvLayout, Image)> {
    let grid = build_density_grid(cloud, opts.grid_resolution, opts.bounds);
    let mesh = marching_cubes(&grid, opts.iso);
    let uv = unwrap_uv(&mesh, opts.texture_size);
    let source = StaticScene {
        cloud: cloud.clone(),
        background: opts.background,
    };
    let texture = backproject_colors(&mesh, &uv, &source as &dyn RgbaSource, &opts.views, &opts.backproject)?;
    Ok((mesh, uv, texture))
}

/// Extracts the mesh of the cloud at `times[0]` and advects its vertices by
/// the deformation's position head to every later time, so frames share
/// topology, UVs and one texture. A frame whose advected faces flip too often
/// is extracted independently with its own texture instead.
pub fn extract_sequence(
    cloud: &GaussianCloud,
    field: &HexPlaneField,
    decoder: &DeformDecoder,
    times: &[f64],
    opts: &ExtractOptions,
) -> Result<TexturedMeshSequence> {
    let Some(&first) = times.first() else {
        return Ok(TexturedMeshSequence {
            frames: Vec::new(),
            textures: Vec::new(),
        });
    };
    // The reference mesh lives in the static frame; the first frame is advected like the rest.
    let (base, uv, _) = {
        let grid = build_density_grid(cloud, opts.grid_resolution, opts.bounds);
        let mesh = marching_cubes(&grid, opts.iso);
        let uv = unwrap_uv(&mesh, opts.texture_size);
        (mesh, uv, ())
    };
    let first_mesh = TriMesh {
        vertices: displace_points(&base.vertices, field, decoder, first),
        faces: base.faces.clone(),
    };
    let first_cloud = deform(cloud, field, decoder, first)?;
    let source = StaticScene {
        cloud: first_cloud,
        background: opts.background,
    };
    let shared = backproject_colors(&first_mesh, &uv, &source as &dyn RgbaSource, &opts.views, &opts.backproject)?;
    let mut seq = TexturedMeshSequence {
        frames: Vec::with_capacity(times.len()),
        textures: vec![shared],
    };
    for &tau in times {
        let moved = TriMesh {
            vertices: displace_points(&base.vertices, field, decoder, tau),
            faces: base.faces.clone(),
        };
        if moved.flipped_fraction(&base) <= opts.max_flipped {
            seq.frames.push(MeshFrame {
                mesh: moved,
                uv: uv.clone(),
                texture: 0,
                time: tau,
            });
        } else {
            let (mesh, own_uv, texture) = extract(&deform(cloud, field, decoder, tau)?, opts)?;
            seq.textures.push(texture);
            seq.frames.push(MeshFrame {
                mesh,
                uv: own_uv,
                texture: seq.textures.len() - 1,
                time: tau,
            });
        }
    }
    Ok(seq)
}
