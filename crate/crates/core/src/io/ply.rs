//! Binary little-endian PLY in the layout used by common 3D Gaussian
//! splatting viewers. Colors go raw into the `f_dc_*` slots.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussians::GaussianCloud;

/// Scalar width used when writing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PlyPrecision {
    /// Bit-exact round trip.
    #[default]
    Double,
    /// Smaller files, compatible with viewers that expect `float`.
    Float,
}

pub const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

pub fn save_cloud(path: &Path, cloud: &GaussianCloud, precision: PlyPrecision) -> Result<()> {
    std::fs::write(path, encode_cloud(cloud, precision)?)?;
    Ok(())
}

pub fn encode_cloud(cloud: &GaussianCloud, precision: PlyPrecision) -> Result<Vec<u8>> {
    cloud.check()?;
    let ty = match precision {
        PlyPrecision::Double => "double",
        PlyPrecision::Float => "float",
    };
    let mut out = Vec::new();
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for name in PROPERTIES {
        writeln!(out, "property {ty} {name}")?;
    }
    writeln!(out, "end_header")?;
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let c = cloud.colors[i];
        let s = cloud.log_scales[i];
        let q = cloud.rotations[i];
        let values = [
            p[0],
            p[1],
            p[2],
            c[0],
            c[1],
            c[2],
            cloud.opacity_logits[i],
            s[0],
            s[1],
            s[2],
            q[0],
            q[1],
            q[2],
            q[3],
        ];
        for v in values {
            match precision {
                PlyPrecision::Double => out.extend_from_slice(&v.to_le_bytes()),
                PlyPrecision::Float => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

pub fn load_cloud(path: &Path) -> Result<GaussianCloud> {
    let bytes = std::fs::read(path)?;
    decode_cloud(&bytes, path)
}

/// Parses PLY bytes; `path` is used only in error messages.
pub fn decode_cloud(bytes: &[u8], path: &Path) -> Result<GaussianCloud> {
    let err = |offset: usize, msg: String| Error::parse(path, offset as u64, msg);
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .ok_or_else(|| err(start, "unterminated header".into()))?;
        *pos = end + 1;
        let line = std::str::from_utf8(&bytes[start..end])
            .map_err(|_| err(start, "header is not valid UTF-8".into()))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (_, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(err(0, format!("missing \"ply\" magic, found {magic:?}")));
    }
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut seen_vertex = false;
    let mut properties: Vec<(String, Scalar)> = Vec::new();
    loop {
        let (at, line) = next_line(&mut pos)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(err(at, format!("unsupported format {fmt:?}; expected binary_little_endian")));
                }
            }
            ["element", name, n] => {
                if seen_vertex {
                    // Elements after the vertex block are not needed.
                    in_vertex = false;
                    continue;
                }
                if *name != "vertex" {
                    return Err(err(at, format!("element {name:?} precedes the vertex element")));
                }
                count = Some(n.parse().map_err(|_| err(at, format!("bad vertex count {n:?}")))?);
                in_vertex = true;
                seen_vertex = true;
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(err(at, "list properties are not supported on vertices".into()));
                }
            }
            ["property", ty, name] => {
                if in_vertex {
                    let scalar = Scalar::parse(ty).ok_or_else(|| err(at, format!("unknown property type {ty:?}")))?;
                    properties.push((name.to_string(), scalar));
                }
            }
            _ => return Err(err(at, format!("unrecognized header line {line:?}"))),
        }
    }
    let n = count.ok_or_else(|| err(pos, "no vertex element".into()))?;
    let mut slots = [usize::MAX; 14];
    let mut offsets = Vec::with_capacity(properties.len());
    let mut stride = 0;
    for (_, scalar) in &properties {
        offsets.push(stride);
        stride += scalar.size();
    }
    for (k, want) in PROPERTIES.iter().enumerate() {
        slots[k] = properties
            .iter()
            .position(|(name, _)| name == want)
            .ok_or_else(|| err(pos, format!("missing property {want:?}")))?;
    }
    let body = pos;
    if bytes.len() < body + n * stride {
        return Err(err(
            bytes.len(),
            format!("truncated body: {} vertices need {} bytes, found {}", n, n * stride, bytes.len() - body),
        ));
    }
    if n == 0 {
        return Err(err(body, "cloud must contain at least one Gaussian".into()));
    }
    let mut cloud = GaussianCloud::with_capacity(n);
    let mut v = [0.0; 14];
    for i in 0..n {
        let row = body + i * stride;
        for k in 0..14 {
            let p = slots[k];
            let at = row + offsets[p];
            v[k] = properties[p].1.read(&bytes[at..]);
            if !v[k].is_finite() {
                return Err(err(at, format!("non-finite {} in vertex {i}", PROPERTIES[k])));
            }
        }
        cloud.push(
            [v[0], v[1], v[2]],
            [v[10], v[11], v[12], v[13]],
            [v[7], v[8], v[9]],
            v[6],
            [v[3], v[4], v[5]],
        );
    }
    Ok(cloud)
}
