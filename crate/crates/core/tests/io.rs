use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splat4d::camera::Camera;
use splat4d::error::Error;
use splat4d::gaussians::GaussianCloud;
use splat4d::guidance::{ExternalProvider, GuidanceProvider, GuidanceRequest, RefineRequest, VideoRefiner};
use splat4d::hexplane::{DeformDecoder, HexPlaneField};
use splat4d::image::Image;
use splat4d::io::{self, pfm, PlyPrecision};

fn write_png_rgba(path: &Path, w: u32, h: u32, px: [u8; 4]) {
    let img = image::RgbaImage::from_pixel(w, h, image::Rgba(px));
    img.save(path).unwrap();
}

#[test]
fn ply_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cloud = GaussianCloud::random_test_scene(5000, &mut rng);
    let path = dir.path().join("cloud.ply");
    io::save_cloud(&path, &cloud, PlyPrecision::Double).unwrap();
    let back = io::load_cloud(&path).unwrap();
    assert_eq!(back, cloud);
    let again = dir.path().join("again.ply");
    io::save_cloud(&again, &back, PlyPrecision::Double).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn float_ply_round_trip_is_within_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cloud = GaussianCloud::random_test_scene(50, &mut rng);
    let path = dir.path().join("cloud.ply");
    io::save_cloud(&path, &cloud, PlyPrecision::Float).unwrap();
    let back = io::load_cloud(&path).unwrap();
    for (a, b) in back.positions.iter().flatten().zip(cloud.positions.iter().flatten()) {
        assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0));
    }
}

/// Three Gaussians in the float layout common splatting viewers write,
/// including normals and one higher-order color coefficient the reader must skip.
fn viewer_style_ply() -> Vec<u8> {
    let names = [
        "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "f_rest_0", "opacity", "scale_0", "scale_1",
        "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    ];
    let mut out = b"ply\nformat binary_little_endian 1.0\ncomment fixture\nelement vertex 3\n".to_vec();
    for n in names {
        out.extend_from_slice(format!("property float {n}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for i in 0..3 {
        let f = i as f32;
        let row = [
            f, -f, 0.5, 0.0, 0.0, 1.0, 0.25 * f, 0.5, 1.0, 9.0, -1.0 + f, -2.0, -2.5, -3.0, 1.0, 0.0, 0.5 * f, 0.0,
        ];
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[test]
fn viewer_style_ply_loads() {
    let cloud = io::ply::decode_cloud(&viewer_style_ply(), Path::new("fixture.ply")).unwrap();
    assert_eq!(cloud.len(), 3);
    assert_eq!(cloud.positions[2], [2.0, -2.0, 0.5]);
    assert_eq!(cloud.colors[1], [0.25, 0.5, 1.0]);
    assert_eq!(cloud.opacity_logits, vec![-1.0, 0.0, 1.0]);
    assert_eq!(cloud.log_scales[0], [-2.0, -2.5, -3.0]);
    assert_eq!(cloud.rotations[2], [1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn missing_property_is_a_parse_error() {
    let bytes = viewer_style_ply();
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let cut = text.find("property float opacity\n").unwrap();
    let mut broken = bytes[..cut].to_vec();
    broken.extend_from_slice(&bytes[cut + "property float opacity\n".len()..]);
    match io::ply::decode_cloud(&broken, Path::new("broken.ply")) {
        Err(Error::Parse { path, message, .. }) => {
            assert_eq!(path, Path::new("broken.ply"));
            assert!(message.contains("opacity"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_ply_reports_offsets() {
    let bytes = viewer_style_ply();
    let truncated = &bytes[..bytes.len() - 4];
    assert!(matches!(
        io::ply::decode_cloud(truncated, Path::new("t.ply")),
        Err(Error::Parse { offset, .. }) if offset as usize == truncated.len()
    ));
    let ascii = String::from_utf8_lossy(&bytes).replace("binary_little_endian", "ascii");
    assert!(matches!(
        io::ply::decode_cloud(ascii.as_bytes(), Path::new("a.ply")),
        Err(Error::Parse { offset: 4, .. })
    ));
    assert!(matches!(
        io::ply::decode_cloud(b"plx\n", Path::new("m.ply")),
        Err(Error::Parse { offset: 0, .. })
    ));
}

#[test]
fn video_frames_load_in_name_order_over_white() {
    let dir = tempfile::tempdir().unwrap();
    for (k, a) in [(2, 0u8), (0, 255), (1, 128)] {
        write_png_rgba(&dir.path().join(format!("f_{k:02}.png")), 4, 3, [0, 0, 0, a]);
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let video = io::load_video(dir.path(), Camera::orbit(0.0, 0.0, 256)).unwrap();
    assert_eq!(video.len(), 3);
    assert_eq!((video.camera.width, video.camera.height), (4, 3));
    assert_eq!(video.frames[0].pixel(0, 0), [0.0; 3]);
    let mid = 1.0 - 128.0 / 255.0;
    assert!((video.frames[1].pixel(3, 2)[0] - mid).abs() < 1e-12);
    assert_eq!(video.frames[2].pixel(1, 1), [1.0; 3]);

    let pattern = video_pattern(dir.path());
    assert_eq!(io::load_video(&pattern, Camera::orbit(0.0, 0.0, 8)).unwrap().len(), 3);
}

fn video_pattern(dir: &Path) -> std::path::PathBuf {
    dir.join("f_*.png")
}

#[test]
fn video_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_png_rgba(&dir.path().join("a.png"), 4, 4, [0, 0, 0, 255]);
    assert!(matches!(io::load_video(dir.path(), Camera::orbit(0.0, 0.0, 4)), Err(Error::Video(_))));
    write_png_rgba(&dir.path().join("b.png"), 5, 4, [0, 0, 0, 255]);
    match io::load_video(dir.path(), Camera::orbit(0.0, 0.0, 4)) {
        Err(Error::Video(msg)) => assert!(msg.contains("b.png") && msg.contains("5x4"), "{msg}"),
        other => panic!("expected a video error, got {other:?}"),
    }
    assert!(io::load_video(&dir.path().join("missing"), Camera::orbit(0.0, 0.0, 4)).is_err());
}

#[test]
fn saved_frames_reload() {
    let dir = tempfile::tempdir().unwrap();
    let frames = vec![Image::filled(3, 2, [1.0, 0.0, 0.0]), Image::filled(3, 2, [0.0, 0.0, 1.0])];
    let paths = io::save_frames(dir.path(), &frames).unwrap();
    assert!(paths[1].ends_with("frame_001.png"));
    let video = io::load_video(dir.path(), Camera::orbit(0.0, 0.0, 3)).unwrap();
    assert_eq!(video.frames, frames);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut field = HexPlaneField::new(6, 3, 5, &mut rng);
    field.bounds_min = [-1.5, -1.0, -0.5];
    let mut decoder = DeformDecoder::new(5, 7, 2, &mut rng);
    for (k, v) in decoder.params.iter_mut().enumerate() {
        *v += 1e-3 * k as f64;
    }
    let path = dir.path().join("deform.ckpt");
    io::save_checkpoint(&path, &field, &decoder).unwrap();
    let (f, d) = io::load_checkpoint(&path).unwrap();
    assert_eq!(f, field);
    assert_eq!(d, decoder);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(io::load_checkpoint(&path), Err(Error::Parse { .. })));
    std::fs::write(&path, b"NOTACKPT").unwrap();
    assert!(matches!(io::load_checkpoint(&path), Err(Error::Parse { offset: 0, .. })));
}

#[test]
fn pfm_round_trip_preserves_orientation() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = Image::new(3, 2);
    for (k, v) in img.data.iter_mut().enumerate() {
        *v = k as f64 * 0.25 - 1.0;
    }
    let path = dir.path().join("g.pfm");
    pfm::save(&path, &img).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = b"PF\n3 2\n-1.0\n";
    assert_eq!(&bytes[..header.len()], header);
    // First stored row is the bottom row.
    let first = f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap());
    assert_eq!(first as f64, img.pixel(0, 1)[0]);
    assert_eq!(pfm::load(&path).unwrap(), img);
}

const PROVIDER: &str = r#"
import json, struct, sys

def load(path):
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    vals = struct.unpack("<%df" % (w * h * 3), parts[3][: w * h * 12])
    return w, h, vals

def save(path, w, h, vals):
    with open(path, "wb") as f:
        f.write(b"PF\n%d %d\n-1.0\n" % (w, h))
        f.write(struct.pack("<%df" % len(vals), *vals))

for line in sys.stdin:
    req = json.loads(line)
    if req["op"] == "guidance":
        if req["t"] > 0.9:
            print(json.dumps({"error": "noise too high"}), flush=True)
            continue
        w, h, vals = load(req["image"])
        out = req["image"] + ".grad.pfm"
        save(out, w, h, [req["t"] * (v - 0.5) for v in vals])
        print(json.dumps({"gradient": out}), flush=True)
    else:
        print(json.dumps({"frames": req["clean"]}), flush=True)
"#;

fn spawn_provider(dir: &Path) -> ExternalProvider {
    let script = dir.join("provider.py");
    std::fs::write(&script, PROVIDER).unwrap();
    ExternalProvider::spawn("python3", &[script.to_string_lossy().into_owned()], &dir.join("work")).unwrap()
}

#[test]
fn external_provider_speaks_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let provider = spawn_provider(dir.path());
    let cam = Camera::orbit(0.0, 0.0, 4);
    let mut image = Image::new(4, 4);
    for (k, v) in image.data.iter_mut().enumerate() {
        *v = (k % 5) as f64 * 0.25;
    }
    let request = GuidanceRequest {
        image: &image,
        camera: &cam,
        reference: None,
        t: 0.5,
        time: 0.0,
        seed: 1,
    };
    let grad = provider.gradient(&request).unwrap();
    for (g, v) in grad.data.iter().zip(&image.data) {
        assert!((g - 0.5 * (v - 0.5)).abs() < 1e-7);
    }
    let high = GuidanceRequest { t: 0.95, ..request };
    match provider.gradient(&high) {
        Err(Error::Provider(msg)) => assert!(msg.contains("noise too high")),
        other => panic!("expected a provider error, got {other:?}"),
    }

    let clean = vec![Image::filled(4, 4, [0.25, 0.5, 0.75]); 2];
    let noisy = vec![Image::filled(4, 4, [0.0; 3]); 2];
    let refined = provider
        .refine(&RefineRequest {
            noisy: &noisy,
            clean: &clean,
            cameras: &[cam, cam],
            times: &[0.0, 1.0],
            input: None,
            t: 0.7,
            seed: 3,
        })
        .unwrap();
    assert_eq!(refined, clean);
}

#[test]
fn missing_provider_program_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let err = ExternalProvider::spawn("/nonexistent/provider", &[], dir.path()).err().unwrap();
    assert!(matches!(err, Error::Provider(_)));
}
