//! Driving-video frames from numbered RGBA PNG files.

use std::path::{Path, PathBuf};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::trainer::DrivingVideo;

/// Frame files for `source`: either a directory (every `.png` inside, by
/// name) or a pattern with one `*` in the file name, such as `clip/frame_*.png`.
pub fn frame_paths(source: &Path) -> Result<Vec<PathBuf>> {
    let (dir, matcher): (PathBuf, Box<dyn Fn(&str) -> bool>) = if source.is_dir() {
        (source.to_path_buf(), Box::new(|name: &str| name.to_ascii_lowercase().ends_with(".png")))
    } else {
        let name = source
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Video(format!("{} is neither a directory nor a pattern", source.display())))?
            .to_string();
        let Some((prefix, suffix)) = name.split_once('*') else {
            return Err(Error::Video(format!("{} is not a directory and has no '*'", source.display())));
        };
        let (prefix, suffix) = (prefix.to_string(), suffix.to_string());
        let dir = source.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        (
            dir.to_path_buf(),
            Box::new(move |n: &str| n.len() >= prefix.len() + suffix.len() && n.starts_with(&prefix) && n.ends_with(&suffix)),
        )
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.file_name().and_then(|n| n.to_str()).is_some_and(&matcher))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Reads an RGBA PNG and composites it over white.
pub fn load_rgba_over_white(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgba8();
    let (w, h) = img.dimensions();
    let mut out = Image::new(w as usize, h as usize);
    for (i, px) in img.pixels().enumerate() {
        let a = px[3] as f64 / 255.0;
        for c in 0..3 {
            out.data[i * 3 + c] = px[c] as f64 / 255.0 * a + (1.0 - a);
        }
    }
    Ok(out)
}

/// Loads a driving video seen from `camera` (resized to the frame size).
pub fn load_video(source: &Path, camera: Camera) -> Result<DrivingVideo> {
    let paths = frame_paths(source)?;
    if paths.len() < 2 {
        return Err(Error::Video(format!(
            "{} holds {} frame(s); a driving video needs at least 2",
            source.display(),
            paths.len()
        )));
    }
    let frames = paths.iter().map(|p| load_rgba_over_white(p)).collect::<Result<Vec<_>>>()?;
    let (w, h) = (frames[0].width, frames[0].height);
    let offenders: Vec<String> = paths
        .iter()
        .zip(&frames)
        .filter(|(_, f)| f.width != w || f.height != h)
        .map(|(p, f)| format!("{} ({}x{})", p.display(), f.width, f.height))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::Video(format!(
            "frames must share the first frame's size {w}x{h}; mismatched: {}",
            offenders.join(", ")
        )));
    }
    DrivingVideo::new(frames, camera.with_size(w, h))
}

/// Writes frames as `frame_000.png`, `frame_001.png`, ….
pub fn save_frames(dir: &Path, frames: &[Image]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let path = dir.join(format!("frame_{k:03}.png"));
            f.save_png(&path)?;
            Ok(path)
        })
        .collect()
}
