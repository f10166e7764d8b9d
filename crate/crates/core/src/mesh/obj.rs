//! Wavefront OBJ + MTL + PNG output, one file set per frame.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::sequence::{MeshFrame, TexturedMeshSequence};
use super::{TriMesh, UvLayout};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;

/// Base name of frame `k`: `frame_000`, `frame_001`, ...
pub fn frame_name(k: usize) -> String {
    format!("frame_{k:03}")
}

/// OBJ text for one textured mesh. Floats use the shortest round-trip
/// formatting, so equal meshes give byte-identical files.
pub fn encode_obj(mesh: &TriMesh, uv: &UvLayout, material_lib: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mtllib {material_lib}");
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for t in &uv.uvs {
        let _ = writeln!(out, "vt {} {}", t[0], t[1]);
    }
    let _ = writeln!(out, "usemtl texture");
    for (f, t) in mesh.faces.iter().zip(&uv.faces) {
        let _ = writeln!(
            out,
            "f {}/{} {}/{} {}/{}",
            f[0] + 1,
            t[0] + 1,
            f[1] + 1,
            t[1] + 1,
            f[2] + 1,
            t[2] + 1
        );
    }
    out
}

fn encode_mtl(texture_file: &str) -> String {
    format!("newmtl texture\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {texture_file}\n")
}

/// Writes `frame_XXX.obj`, `.mtl` and `.png` for every frame into `dir` and
/// returns the OBJ paths.
pub fn write_sequence(dir: &Path, sequence: &TexturedMeshSequence) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(sequence.frames.len());
    for (k, frame) in sequence.frames.iter().enumerate() {
        let name = frame_name(k);
        let obj = dir.join(format!("{name}.obj"));
        std::fs::write(&obj, encode_obj(&frame.mesh, &frame.uv, &format!("{name}.mtl")))?;
        std::fs::write(dir.join(format!("{name}.mtl")), encode_mtl(&format!("{name}.png")))?;
        sequence.texture_of(k).save_png(&dir.join(format!("{name}.png")))?;
        written.push(obj);
    }
    Ok(written)
}

/// Reads a sequence written by [`write_sequence`]. Frame `k` of `n` gets
/// time `k / (n - 1)`; frames with equal UVs and equal texture pixels share
/// one texture again.
pub fn read_sequence(dir: &Path) -> Result<TexturedMeshSequence> {
    let mut seq = TexturedMeshSequence {
        frames: Vec::new(),
        textures: Vec::new(),
    };
    let mut paths = Vec::new();
    while dir.join(format!("{}.obj", frame_name(paths.len()))).is_file() {
        paths.push(dir.join(format!("{}.obj", frame_name(paths.len()))));
    }
    if paths.is_empty() {
        return Err(Error::parse(dir, 0, format!("no {}.obj in directory", frame_name(0))));
    }
    let n = paths.len();
    for (k, path) in paths.iter().enumerate() {
        let obj = read_obj(path)?;
        let texture = obj
            .texture(path)?
            .ok_or_else(|| Error::parse(path, 0, "frame has no texture map"))?;
        if obj.uv_faces.len() != obj.faces.len() {
            return Err(Error::parse(path, 0, "every face needs texture coordinates"));
        }
        let uv = UvLayout {
            uvs: obj.uvs.clone(),
            faces: obj.uv_faces.clone(),
            charts: 0,
            skipped: Vec::new(),
            texture_size: texture.width,
        };
        let shared = seq
            .frames
            .iter()
            .find(|f: &&MeshFrame| f.uv.uvs == uv.uvs && f.uv.faces == uv.faces && seq.textures[f.texture] == texture)
            .map(|f| f.texture);
        let texture = match shared {
            Some(t) => t,
            None => {
                seq.textures.push(texture);
                seq.textures.len() - 1
            }
        };
        seq.frames.push(MeshFrame {
            mesh: obj.mesh(),
            uv,
            texture,
            time: if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 },
        });
    }
    Ok(seq)
}

/// Geometry and texture coordinates read back from an OBJ file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub faces: Vec<[u32; 3]>,
    /// Per-face UV indices; empty when the file has no `vt` references.
    pub uv_faces: Vec<[u32; 3]>,
    pub material_lib: Option<String>,
}

impl ObjMesh {
    pub fn mesh(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
        }
    }

    /// Texture referenced by the material library, if any.
    pub fn texture(&self, obj_path: &Path) -> Result<Option<Image>> {
        let Some(lib) = &self.material_lib else {
            return Ok(None);
        };
        let dir = obj_path.parent().unwrap_or(Path::new("."));
        let text = std::fs::read_to_string(dir.join(lib))?;
        match text.lines().find_map(|l| l.trim().strip_prefix("map_Kd ")) {
            Some(file) => Ok(Some(Image::load_png(&dir.join(file.trim()))?)),
            None => Ok(None),
        }
    }
}

/// Parses triangle OBJ files with `v`, `vt` and `f` records; polygons are
/// fan-triangulated and other records ignored.
pub fn read_obj(path: &Path) -> Result<ObjMesh> {
    let text = std::fs::read_to_string(path)?;
    let mut out = ObjMesh::default();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len() as u64;
        let fail = |message: String| Error::parse(path, here, message);
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let numbers = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>> {
            parts
                .map(|p| p.parse::<f64>().map_err(|e| fail(format!("bad number {p:?}: {e}"))))
                .collect()
        };
        match tag {
            "v" => {
                let v = numbers(parts)?;
                if v.len() < 3 {
                    return Err(fail("vertex needs 3 coordinates".into()));
                }
                out.vertices.push([v[0], v[1], v[2]]);
            }
            "vt" => {
                let v = numbers(parts)?;
                if v.len() < 2 {
                    return Err(fail("texture coordinate needs 2 values".into()));
                }
                out.uvs.push([v[0], v[1]]);
            }
            "f" => {
                let mut pos = Vec::new();
                let mut tex = Vec::new();
                for corner in parts {
                    let mut fields = corner.split('/');
                    let index = |s: Option<&str>, count: usize| -> Result<Option<u32>> {
                        match s.filter(|s| !s.is_empty()) {
                            None => Ok(None),
                            Some(s) => {
                                let i: i64 = s.parse().map_err(|e| fail(format!("bad index {s:?}: {e}")))?;
                                let resolved = if i < 0 { count as i64 + i } else { i - 1 };
                                if resolved < 0 || resolved >= count as i64 {
                                    return Err(fail(format!("index {i} out of range")));
                                }
                                Ok(Some(resolved as u32))
                            }
                        }
                    };
                    pos.push(index(fields.next(), out.vertices.len())?.ok_or_else(|| fail("empty face corner".into()))?);
                    if let Some(t) = index(fields.next(), out.uvs.len())? {
                        tex.push(t);
                    }
                }
                if pos.len() < 3 {
                    return Err(fail("face needs at least 3 corners".into()));
                }
                let textured = tex.len() == pos.len();
                for k in 1..pos.len() - 1 {
                    out.faces.push([pos[0], pos[k], pos[k + 1]]);
                    if textured {
                        out.uv_faces.push([tex[0], tex[k], tex[k + 1]]);
                    }
                }
            }
            "mtllib" => out.material_lib = parts.next().map(str::to_string),
            _ => {}
        }
    }
    if !out.uv_faces.is_empty() && out.uv_faces.len() != out.faces.len() {
        return Err(Error::parse(path, 0, "only some faces carry texture coordinates"));
    }
    Ok(out)
}
