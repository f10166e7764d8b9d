//! Python bindings for splat4d.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use splat4d::guidance::{oracle_guidance, GuidanceProvider, StaticScene, ZeroGuidance};
use splat4d::hexplane::{self, DeformDecoder, HexPlaneField};
use splat4d::io::{self, video, PlyPrecision};
use splat4d::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Range { .. } | Error::Camera(_) | Error::Dimension { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for splat4d::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A cloud of 3D Gaussians.
#[pyclass(name = "GaussianCloud", module = "splat4d", skip_from_py_object)]
#[derive(Clone)]
struct PyCloud {
    inner: splat4d::GaussianCloud,
}

#[pymethods]
impl PyCloud {
    /// `n` small Gaussians drawn uniformly in a ball.
    #[staticmethod]
    #[pyo3(signature = (n, radius=0.5, seed=0))]
    fn random_ball(n: usize, radius: f64, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self {
            inner: splat4d::GaussianCloud::random_ball(n, radius, &mut rng),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_cloud(&path).py()?,
        })
    }

    /// Writes a binary PLY; `precision` is "double" or "float".
    #[pyo3(signature = (path, precision="double"))]
    fn save(&self, path: PathBuf, precision: &str) -> PyResult<()> {
        let precision = match precision {
            "double" => PlyPrecision::Double,
            "float" => PlyPrecision::Float,
            other => return Err(PyValueError::new_err(format!("unknown precision {other:?}"))),
        };
        io::save_cloud(&path, &self.inner, precision).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("GaussianCloud(len={})", self.inner.len())
    }

    #[getter]
    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.positions.clone()
    }

    #[getter]
    fn colors(&self) -> Vec<[f64; 3]> {
        self.inner.colors.clone()
    }

    #[getter]
    fn opacities(&self) -> Vec<f64> {
        (0..self.inner.len()).map(|i| self.inner.opacity(i)).collect()
    }
}

/// Orbit camera looking at the origin.
#[pyclass(name = "Camera", module = "splat4d", skip_from_py_object)]
#[derive(Clone)]
struct PyCamera {
    inner: splat4d::Camera,
}

#[pymethods]
impl PyCamera {
    #[new]
    #[pyo3(signature = (azimuth=0.0, elevation=0.0, size=256))]
    fn new(azimuth: f64, elevation: f64, size: usize) -> PyResult<Self> {
        let inner = splat4d::Camera::orbit(azimuth, elevation, size);
        inner.validate().py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn azimuth(&self) -> f64 {
        self.inner.azimuth
    }

    #[getter]
    fn elevation(&self) -> f64 {
        self.inner.elevation
    }

    #[getter]
    fn size(&self) -> (usize, usize) {
        (self.inner.width, self.inner.height)
    }

    fn position(&self) -> [f64; 3] {
        self.inner.position()
    }

    fn __repr__(&self) -> String {
        format!(
            "Camera(azimuth={}, elevation={}, size={}x{})",
            self.inner.azimuth, self.inner.elevation, self.inner.width, self.inner.height
        )
    }
}

/// A learned deformation: HexPlane field plus decoder.
#[pyclass(name = "Deformation", module = "splat4d")]
struct PyDeformation {
    field: HexPlaneField,
    decoder: DeformDecoder,
}

#[pymethods]
impl PyDeformation {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (field, decoder) = io::load_checkpoint(&path).py()?;
        Ok(Self { field, decoder })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_checkpoint(&path, &self.field, &self.decoder).py()
    }

    /// The cloud at normalized time `t` in [0, 1].
    fn apply(&self, cloud: &PyCloud, t: f64) -> PyResult<PyCloud> {
        Ok(PyCloud {
            inner: hexplane::deform(&cloud.inner, &self.field, &self.decoder, t).py()?,
        })
    }
}

/// Pipeline settings; see `configs/pipeline.toml` for every key.
#[pyclass(name = "PipelineConfig", module = "splat4d", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: io::PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new(seed: u64) -> Self {
        Self {
            inner: io::PipelineConfig::new(seed),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::PipelineConfig::load(&path).py()?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::PipelineConfig::from_toml(text).py()?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().py()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
}

/// Renders `cloud`; returns `(width, height, rgb, alpha)` with row-major
/// interleaved RGB.
#[pyfunction]
#[pyo3(signature = (cloud, camera, background=[1.0, 1.0, 1.0]))]
fn render(
    py: Python<'_>,
    cloud: &PyCloud,
    camera: &PyCamera,
    background: [f64; 3],
) -> PyResult<(usize, usize, Vec<f64>, Vec<f64>)> {
    let out = py
        .detach(|| splat4d::rasterizer::render(&cloud.inner, &camera.inner, background))
        .py()?;
    Ok((out.rgb.width, out.rgb.height, out.rgb.data, out.alpha))
}

/// Fits a static cloud to the RGBA PNG at `image`, seen from `camera`.
/// With `oracle` set, guidance renders that cloud; otherwise only the
/// reference view is fitted.
#[pyfunction]
#[pyo3(signature = (image, config, camera=None, oracle=None))]
fn fit_static(
    py: Python<'_>,
    image: PathBuf,
    config: &PyConfig,
    camera: Option<&PyCamera>,
    oracle: Option<&PyCloud>,
) -> PyResult<PyCloud> {
    let settings = &config.inner.static_fit;
    settings.validate().py()?;
    let reference = video::load_rgba_over_white(&image).py()?;
    let camera = camera
        .map(|c| c.inner)
        .unwrap_or_else(|| splat4d::Camera::orbit(0.0, 0.0, 1))
        .with_size(reference.width, reference.height);
    let provider: Box<dyn GuidanceProvider> = match oracle {
        Some(c) => Box::new(oracle_guidance(StaticScene {
            cloud: c.inner.clone(),
            background: settings.background,
        })),
        None => Box::new(ZeroGuidance),
    };
    let cloud = py
        .detach(|| splat4d::trainer::fit_static(&reference, &camera, provider.as_ref(), settings, &mut |_| {}))
        .py()?;
    Ok(PyCloud { inner: cloud })
}

/// Fits a deformation of `cloud` to the frames at `video` (a directory or a
/// glob pattern), seen from `camera`.
#[pyfunction]
#[pyo3(signature = (cloud, video, config, camera=None))]
fn fit_dynamic(
    py: Python<'_>,
    cloud: &PyCloud,
    video: PathBuf,
    config: &PyConfig,
    camera: Option<&PyCamera>,
) -> PyResult<PyDeformation> {
    let settings = &config.inner.dynamic;
    settings.validate().py()?;
    let camera = camera.map(|c| c.inner).unwrap_or_else(|| splat4d::Camera::orbit(0.0, 0.0, 1));
    let clip = io::load_video(&video, camera).py()?;
    let fit = py
        .detach(|| splat4d::trainer::fit_dynamic(&cloud.inner, &clip, &ZeroGuidance, settings, &mut |_| {}))
        .py()?;
    Ok(PyDeformation {
        field: fit.field,
        decoder: fit.decoder,
    })
}

/// Writes a textured OBJ sequence of `frames` evenly spaced times to `out`
/// and returns the written paths.
#[pyfunction]
#[pyo3(signature = (cloud, out, config, deformation=None, frames=14))]
fn export_mesh(
    py: Python<'_>,
    cloud: &PyCloud,
    out: PathBuf,
    config: &PyConfig,
    deformation: Option<&PyDeformation>,
    frames: usize,
) -> PyResult<Vec<PathBuf>> {
    config.inner.mesh.validate().py()?;
    let still = (HexPlaneField::filled(2, 2, 1, 1.0), DeformDecoder::zeros(1, 1, 1));
    let (field, decoder, times) = match deformation {
        Some(d) if frames >= 2 => (
            &d.field,
            &d.decoder,
            (0..frames).map(|k| k as f64 / (frames - 1) as f64).collect(),
        ),
        Some(_) => return Err(PyValueError::new_err("frames must be at least 2 with a deformation")),
        None => (&still.0, &still.1, vec![0.0]),
    };
    let options = config.inner.mesh.extract_options();
    py.detach(|| {
        let seq = splat4d::mesh::extract_sequence(&cloud.inner, field, decoder, &times, &options)?;
        splat4d::mesh::write_sequence(&out, &seq)
    })
    .py()
}

/// Azimuth (degrees) from which `cloud` best matches the PNG at `image`;
/// returns `(azimuth, loss)`.
#[pyfunction]
#[pyo3(signature = (cloud, image, step=1.0, background=[1.0, 1.0, 1.0]))]
fn align_azimuth(cloud: &PyCloud, image: PathBuf, step: f64, background: [f64; 3]) -> PyResult<(f64, f64)> {
    let reference = video::load_rgba_over_white(&image).py()?;
    let found = splat4d::align::align_azimuth(&cloud.inner, &reference, step, background).py()?;
    Ok((found.azimuth, found.loss))
}

/// Finite-difference gradient check; returns `(passed, report_json)`.
#[pyfunction]
#[pyo3(signature = (seed=7, scenes=20))]
fn gradcheck(py: Python<'_>, seed: u64, scenes: usize) -> PyResult<(bool, String)> {
    let report = py.detach(|| splat4d::gradcheck::run_suite(seed, scenes)).py()?;
    let json = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((report.passed(), json))
}

#[pymodule(name = "splat4d")]
fn splat4d_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCloud>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyDeformation>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(fit_static, m)?)?;
    m.add_function(wrap_pyfunction!(fit_dynamic, m)?)?;
    m.add_function(wrap_pyfunction!(export_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(align_azimuth, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
