//! Portable float map (color, little-endian) for lossless-enough exchange of
//! signed gradient images with external providers.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub fn save(path: &Path, image: &Image) -> Result<()> {
    let mut out = Vec::with_capacity(32 + image.data.len() * 4);
    write!(out, "PF\n{} {}\n-1.0\n", image.width, image.height)?;
    // Rows are stored bottom to top.
    for y in (0..image.height).rev() {
        let row = &image.data[y * image.width * 3..(y + 1) * image.width * 3];
        for v in row {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, start as u64, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "PF" {
        return Err(Error::parse(path, 0, format!("expected color PFM magic \"PF\", found {magic:?}")));
    }
    let parse_usize = |s: String| s.parse::<usize>().map_err(|e| Error::parse(path, 3, format!("bad size {s:?}: {e}")));
    let width = parse_usize(token()?)?;
    let height = parse_usize(token()?)?;
    let scale: f64 = token()?
        .parse()
        .map_err(|e| Error::parse(path, 3, format!("bad scale: {e}")))?;
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let need = width * height * 3 * 4;
    if bytes.len() < pos + need {
        return Err(Error::parse(path, bytes.len() as u64, format!("truncated: need {need} data bytes")));
    }
    let mut image = Image::new(width, height);
    let mut at = pos;
    for y in (0..height).rev() {
        for x in 0..width * 3 {
            let raw: [u8; 4] = bytes[at..at + 4].try_into().expect("4 bytes");
            let v = if scale < 0.0 {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            image.data[y * width * 3 + x] = v as f64;
            at += 4;
        }
    }
    Ok(image)
}
