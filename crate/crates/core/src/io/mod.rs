//! File formats: Gaussian PLY, driving-video frames, deformation
//! checkpoints, float images, and the pipeline configuration.

pub mod checkpoint;
pub mod config;
pub mod pfm;
pub mod ply;
pub mod video;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::PipelineConfig;
pub use ply::{load_cloud, save_cloud, PlyPrecision};
pub use video::{load_video, save_frames};
