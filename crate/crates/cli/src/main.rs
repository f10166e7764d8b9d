//! Command-line front end for the splat4d pipeline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use splat4d::guidance::{
    identity_refiner, oracle_guidance, oracle_refiner, DeformedScene, ExternalProvider, GuidanceProvider, StaticScene,
    VideoRefiner, ZeroGuidance,
};
use splat4d::hexplane::{deform, DeformDecoder, HexPlaneField};
use splat4d::io::{self, video, PipelineConfig, PlyPrecision};
use splat4d::mesh::{self, MeshScene, RefineMode};
use splat4d::rasterizer::render;
use splat4d::trainer::{fit_dynamic, fit_static, IterationLog};
use splat4d::{Camera, Error, GaussianCloud, Image};

#[derive(Parser)]
#[command(name = "splat4d", version, about = "Image-to-4D Gaussian splatting on the CPU")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML). Without it, --seed is required.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Guidance {
    /// Oracle guidance rendering this cloud (PLY) from any view.
    #[arg(long)]
    oracle_cloud: Option<PathBuf>,
    /// Deformation checkpoint animating --oracle-cloud.
    #[arg(long, requires = "oracle_cloud")]
    oracle_checkpoint: Option<PathBuf>,
    /// External guidance process speaking line-delimited JSON on stdio.
    #[arg(long, conflicts_with = "oracle_cloud", num_args = 1..)]
    provider: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a static Gaussian cloud to a reference image.
    FitStatic {
        #[command(flatten)]
        guidance: Guidance,
        /// Reference RGBA PNG, composited over white.
        #[arg(long)]
        image: PathBuf,
        /// Output PLY.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        elevation: f64,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        initial_gaussians: Option<usize>,
        #[arg(long)]
        render_size: Option<usize>,
        #[arg(long)]
        no_densify: bool,
        /// JSON-lines training log; stderr when absent.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fit a HexPlane deformation of a static cloud to a driving video.
    FitDynamic {
        #[command(flatten)]
        guidance: Guidance,
        #[arg(long)]
        cloud: PathBuf,
        /// Directory of frames or a pattern such as `clip/frame_*.png`.
        #[arg(long)]
        video: PathBuf,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        elevation: f64,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        spatial_res: Option<usize>,
        #[arg(long)]
        temporal_res: Option<usize>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Export a textured OBJ sequence.
    ExportMesh {
        #[arg(long)]
        cloud: PathBuf,
        /// Deformation checkpoint; without it a single static frame is written.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 14)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grid_resolution: Option<usize>,
        #[arg(long)]
        texture_size: Option<usize>,
        #[arg(long)]
        render_size: Option<usize>,
    },
    /// Refine the textures of an exported OBJ sequence.
    RefineTexture {
        /// Directory written by export-mesh.
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = RefinerKind::Identity)]
        refiner: RefinerKind,
        /// Ground-truth OBJ sequence for the oracle refiner.
        #[arg(long, required_if_eq("refiner", "oracle"))]
        oracle_mesh: Option<PathBuf>,
        /// Program and arguments of an external refiner.
        #[arg(long, required_if_eq("refiner", "external"), num_args = 1..)]
        provider: Option<Vec<String>>,
        /// Input image passed to the refiner.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Render PNG frames orbiting a (possibly deforming) cloud.
    RenderTurntable {
        #[arg(long)]
        cloud: PathBuf,
        /// Deformation checkpoint; time runs from 0 to 1 over the frames.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 36)]
        frames: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        elevation: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find the azimuth from which a cloud best matches an image.
    AlignAzimuth {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        scenes: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RefinerKind {
    Identity,
    Oracle,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    PerFrame,
}

/// Failures carry the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Range { .. } | Error::Camera(_) => 2,
            Error::Numerical(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

fn load_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut config = match (&common.config, common.seed) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(seed)) => PipelineConfig::new(seed),
        (None, None) => return Err(config_error("a seed is required: pass --config or --seed")),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.derive_seeds();
    }
    Ok(config)
}

fn check(config: &PipelineConfig) -> Outcome {
    config.validate()?;
    Ok(())
}

fn program(args: &[String]) -> Result<(&str, &[String]), Failure> {
    args.split_first()
        .map(|(p, rest)| (p.as_str(), rest))
        .ok_or_else(|| config_error("--provider needs a program"))
}

fn scratch_dir(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".provider");
    out.with_file_name(name)
}

fn guidance_provider(g: &Guidance, background: [f64; 3], out: &Path) -> Result<Box<dyn GuidanceProvider>, Failure> {
    if let Some(args) = &g.provider {
        let (prog, rest) = program(args)?;
        return Ok(Box::new(ExternalProvider::spawn(prog, rest, &scratch_dir(out))?));
    }
    let Some(path) = &g.oracle_cloud else {
        eprintln!("warning: no guidance given; fitting the reference view only");
        return Ok(Box::new(ZeroGuidance));
    };
    let cloud = io::load_cloud(path)?;
    Ok(match &g.oracle_checkpoint {
        Some(ckpt) => {
            let (field, decoder) = io::load_checkpoint(ckpt)?;
            Box::new(oracle_guidance(DeformedScene {
                cloud,
                field,
                decoder,
                background,
            }))
        }
        None => Box::new(oracle_guidance(StaticScene { cloud, background })),
    })
}

/// Writes each log line as JSON to `path`, or to stderr.
fn log_sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stderr()),
    })
}

fn write_log(sink: &mut dyn Write, line: &IterationLog) {
    if let Ok(json) = serde_json::to_string(line) {
        let _ = writeln!(sink, "{json}");
    }
}

/// A deformation that leaves every point where it is.
fn still_deformation() -> (HexPlaneField, DeformDecoder) {
    (HexPlaneField::filled(2, 2, 1, 1.0), DeformDecoder::zeros(1, 1, 1))
}

fn run(cli: Cli) -> Outcome {
    let common = cli.common;
    match cli.command {
        Command::FitStatic {
            guidance,
            image,
            out,
            azimuth,
            elevation,
            iterations,
            views,
            initial_gaussians,
            render_size,
            no_densify,
            log,
        } => {
            let mut config = load_config(&common)?;
            let s = &mut config.static_fit;
            s.iterations = iterations.unwrap_or(s.iterations);
            s.views_per_iteration = views.unwrap_or(s.views_per_iteration);
            s.initial_gaussians = initial_gaussians.unwrap_or(s.initial_gaussians);
            s.render_size = render_size.unwrap_or(s.render_size);
            s.densify &= !no_densify;
            check(&config)?;
            let reference = video::load_rgba_over_white(&image)?;
            let camera = Camera::orbit(azimuth, elevation, 1).with_size(reference.width, reference.height);
            let provider = guidance_provider(&guidance, config.static_fit.background, &out)?;
            let mut sink = log_sink(log.as_deref())?;
            let cloud = fit_static(&reference, &camera, provider.as_ref(), &config.static_fit, &mut |l| {
                write_log(sink.as_mut(), l)
            })?;
            sink.flush()?;
            io::save_cloud(&out, &cloud, PlyPrecision::Double)?;
            println!("wrote {} Gaussians to {}", cloud.len(), out.display());
        }
        Command::FitDynamic {
            guidance,
            cloud,
            video: source,
            out,
            azimuth,
            elevation,
            iterations,
            views,
            spatial_res,
            temporal_res,
            log,
        } => {
            let mut config = load_config(&common)?;
            let d = &mut config.dynamic;
            d.iterations = iterations.unwrap_or(d.iterations);
            d.views_per_timestep = views.unwrap_or(d.views_per_timestep);
            d.spatial_res = spatial_res.unwrap_or(d.spatial_res);
            d.temporal_res = temporal_res.unwrap_or(d.temporal_res);
            check(&config)?;
            let cloud = io::load_cloud(&cloud)?;
            let clip = io::load_video(&source, Camera::orbit(azimuth, elevation, 1))?;
            let provider = guidance_provider(&guidance, config.dynamic.background, &out)?;
            let mut sink = log_sink(log.as_deref())?;
            let fit = fit_dynamic(&cloud, &clip, provider.as_ref(), &config.dynamic, &mut |l| {
                write_log(sink.as_mut(), l)
            })?;
            sink.flush()?;
            io::save_checkpoint(&out, &fit.field, &fit.decoder)?;
            if !config.dynamic.freeze_static {
                let tuned = out.with_extension("ply");
                io::save_cloud(&tuned, &fit.cloud, PlyPrecision::Double)?;
                println!("wrote fine-tuned cloud to {}", tuned.display());
            }
            println!("wrote deformation to {}", out.display());
        }
        Command::ExportMesh {
            cloud,
            checkpoint,
            frames,
            out,
            grid_resolution,
            texture_size,
            render_size,
        } => {
            let mut config = load_config(&common)?;
            let m = &mut config.mesh;
            m.grid_resolution = grid_resolution.unwrap_or(m.grid_resolution);
            m.texture_size = texture_size.unwrap_or(m.texture_size);
            m.render_size = render_size.unwrap_or(m.render_size);
            check(&config)?;
            let cloud = io::load_cloud(&cloud)?;
            let (field, decoder, times) = match &checkpoint {
                Some(path) => {
                    if frames < 2 {
                        return Err(config_error("--frames must be at least 2 with a checkpoint"));
                    }
                    let (f, d) = io::load_checkpoint(path)?;
                    let times = (0..frames).map(|k| k as f64 / (frames - 1) as f64).collect();
                    (f, d, times)
                }
                None => {
                    let (f, d) = still_deformation();
                    (f, d, vec![0.0])
                }
            };
            let seq = mesh::extract_sequence(&cloud, &field, &decoder, &times, &config.mesh.extract_options())?;
            if seq.frames.iter().any(|f| f.mesh.is_empty()) {
                return Err(Error::Numerical("a frame produced an empty mesh; check mesh.iso".into()).into());
            }
            let written = mesh::write_sequence(&out, &seq)?;
            println!(
                "wrote {} frames ({} textures) to {}",
                written.len(),
                seq.textures.len(),
                out.display()
            );
        }
        Command::RefineTexture {
            mesh: source,
            out,
            refiner,
            oracle_mesh,
            provider,
            input,
            mode,
            iterations,
        } => {
            let mut config = load_config(&common)?;
            let r = &mut config.refine;
            r.iterations = iterations.unwrap_or(r.iterations);
            if let Some(mode) = mode {
                r.mode = match mode {
                    ModeArg::Joint => RefineMode::Joint,
                    ModeArg::PerFrame => RefineMode::PerFrame,
                };
            }
            check(&config)?;
            let mut seq = mesh::read_sequence(&source)?;
            let refiner: Box<dyn VideoRefiner> = match refiner {
                RefinerKind::Identity => Box::new(identity_refiner()),
                RefinerKind::Oracle => {
                    let dir = oracle_mesh.as_deref().expect("required by clap");
                    Box::new(oracle_refiner(MeshScene {
                        sequence: mesh::read_sequence(dir)?,
                        background: config.refine.background,
                    }))
                }
                RefinerKind::External => {
                    let (prog, rest) = program(provider.as_deref().unwrap_or_default())?;
                    Box::new(ExternalProvider::spawn(prog, rest, &scratch_dir(&out))?)
                }
            };
            let input = input.map(|p| video::load_rgba_over_white(&p)).transpose()?;
            let report = mesh::refine_textures(&mut seq, refiner.as_ref(), input.as_ref(), &config.refine)?;
            mesh::write_sequence(&out, &seq)?;
            let last = report.losses.last().copied().unwrap_or(0.0);
            println!("refined {} frames, final loss {last:.6e}, wrote {}", seq.frames.len(), out.display());
        }
        Command::RenderTurntable {
            cloud,
            checkpoint,
            frames,
            size,
            elevation,
            out,
        } => {
            let config = load_config(&common)?;
            check(&config)?;
            if frames == 0 || size == 0 {
                return Err(config_error("--frames and --size must be positive"));
            }
            let cloud = io::load_cloud(&cloud)?;
            let deformation = checkpoint.map(|p| io::load_checkpoint(&p)).transpose()?;
            let background = config.static_fit.background;
            let mut images = Vec::with_capacity(frames);
            for (k, cam) in Camera::turntable(frames, -180.0, elevation, size).iter().enumerate() {
                let frame_cloud: GaussianCloud = match &deformation {
                    Some((field, decoder)) => {
                        let tau = if frames > 1 { k as f64 / (frames - 1) as f64 } else { 0.0 };
                        deform(&cloud, field, decoder, tau)?
                    }
                    None => cloud.clone(),
                };
                images.push(render(&frame_cloud, cam, background)?.rgb);
            }
            let written = io::save_frames(&out, &images)?;
            println!("wrote {} frames to {}", written.len(), out.display());
        }
        Command::AlignAzimuth {
            cloud,
            image,
            step,
        } => {
            let config = load_config(&common)?;
            check(&config)?;
            let cloud = io::load_cloud(&cloud)?;
            let reference: Image = video::load_rgba_over_white(&image)?;
            let found = splat4d::align::align_azimuth(&cloud, &reference, step, config.static_fit.background)?;
            println!(
                "{}",
                serde_json::json!({ "azimuth": found.azimuth, "loss": found.loss })
            );
        }
        Command::Gradcheck { scenes } => {
            let config = load_config(&common)?;
            let report = splat4d::gradcheck::run_suite(config.seed, scenes)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| config_error(e.to_string()))?;
            println!("{json}");
            if !report.passed() {
                return Err(Failure {
                    code: 3,
                    message: "analytic gradients disagree with finite differences".into(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
