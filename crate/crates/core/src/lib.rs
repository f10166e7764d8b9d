//! Image-to-4D Gaussian splatting on the CPU.
//!
//! A static Gaussian cloud is fitted to a single reference view with
//! score-distillation guidance, animated by a HexPlane deformation field
//! fitted to a driving video, and exported as a textured mesh sequence.

pub mod align;
pub mod camera;
pub mod error;
pub mod gaussians;
pub mod gradcheck;
pub mod guidance;
pub mod hexplane;
pub mod image;
pub mod io;
pub mod math;
pub mod mesh;
pub mod rasterizer;
pub mod synthetic;
pub mod trainer;

pub use camera::Camera;
pub use error::{Error, Result};
pub use gaussians::{GaussianCloud, GaussianDelta};
pub use image::Image;
