//! Python bindings. Configurations cross the boundary as JSON strings; images as
//! flat row-major RGB lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use surfwatch::checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, FORMAT_VERSION};
use surfwatch::evalkit::{inject_anomaly as inject, AnomalyCategory, AnomalySpec};
use surfwatch::image::{load_image, save_image, BinaryMask, ImageTensor};
use surfwatch::model::{Ganomaly, NetworkConfig};
use surfwatch::postprocess::{self, DetectionReport, PostprocessConfig, SimilarityMatrix};
use surfwatch::preprocess::{self, AugmentationBounds, AugmentationParams, RegionSpec};
use surfwatch::trainer::{self, RegionDataset, TrainConfig};
use surfwatch::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Load { .. } | Error::Save { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &SimilarityMatrix) -> Vec<Vec<f64>> {
    m.values.chunks(m.width).map(<[f64]>::to_vec).collect()
}

#[pyclass(name = "Image", module = "surfwatch_py", from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: ImageTensor,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: ImageTensor::new(height, width, data).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self {
            inner: ImageTensor::filled(height, width, rgb),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_image(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_image(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn pixel(&self, y: usize, x: usize) -> PyResult<[f64; 3]> {
        if y >= self.inner.height() || x >= self.inner.width() {
            return Err(PyValueError::new_err("pixel out of range"));
        }
        Ok(self.inner.pixel(y, x))
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

#[pyclass(name = "Mask", module = "surfwatch_py", from_py_object)]
#[derive(Clone)]
pub struct PyMask {
    inner: BinaryMask,
}

#[pymethods]
impl PyMask {
    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn area(&self) -> usize {
        self.inner.area()
    }

    fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    fn data(&self) -> Vec<bool> {
        self.inner.data().to_vec()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_png(path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: BinaryMask::load_png(path).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Mask({}x{}, area={})", self.inner.width(), self.inner.height(), self.inner.area())
    }
}

/// A region model together with its training metadata.
#[pyclass(name = "Model", module = "surfwatch_py")]
pub struct PyModel {
    inner: ModelCheckpoint,
}

#[pymethods]
impl PyModel {
    /// Untrained model; `network` is a JSON network configuration (desk scale when omitted).
    #[new]
    #[pyo3(signature = (network=None, seed=0))]
    fn new(network: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = match network {
            Some(s) => from_json(s)?,
            None => NetworkConfig::desk_scale(),
        };
        let model = Ganomaly::new(cfg, seed).map_err(py_err)?;
        Ok(Self {
            inner: ModelCheckpoint {
                format_version: FORMAT_VERSION,
                region_index: 0,
                epoch: 0,
                train_config: TrainConfig::default(),
                e_rec_history: Vec::new(),
                e_rec_epochs: Vec::new(),
                loss_history: Vec::new(),
                dataset_fingerprint: String::new(),
                model,
            },
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map_err(py_err)
    }

    fn reconstruct(&mut self, x: &PyImage) -> PyResult<PyImage> {
        Ok(PyImage {
            inner: self.inner.model.reconstruct(&x.inner).map_err(py_err)?,
        })
    }

    fn encode(&mut self, x: &PyImage) -> PyResult<Vec<f64>> {
        self.inner.model.encode(&x.inner).map_err(py_err)
    }

    fn network_config(&self) -> PyResult<String> {
        to_json(self.inner.network_config())
    }

    /// Held-out E_rec (percent) per measured epoch, as `(epoch, e_rec)` pairs.
    fn e_rec_history(&self) -> Vec<(usize, f64)> {
        self.inner.e_rec_epochs.iter().copied().zip(self.inner.e_rec_history.iter().copied()).collect()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }
}

#[pyclass(name = "Report", module = "surfwatch_py")]
pub struct PyReport {
    inner: DetectionReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn anomaly_present(&self) -> bool {
        self.inner.anomaly_present
    }

    #[getter]
    fn final_mask(&self) -> PyMask {
        PyMask {
            inner: self.inner.final_mask.clone(),
        }
    }

    #[getter]
    fn ms_mask(&self) -> PyMask {
        PyMask {
            inner: self.inner.ms_mask.clone(),
        }
    }

    #[getter]
    fn ssim_mask(&self) -> PyMask {
        PyMask {
            inner: self.inner.ssim_mask.clone(),
        }
    }

    fn ms_map(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.ms_map)
    }

    fn ssim_map(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.ssim_map)
    }

    fn summary(&self) -> PyResult<String> {
        to_json(&self.inner.summary())
    }

    #[pyo3(signature = (dir, stem, intermediates=false))]
    fn save_artifacts(&self, dir: PathBuf, stem: &str, intermediates: bool) -> PyResult<()> {
        self.inner.save_artifacts(&dir, stem, intermediates).map_err(py_err)
    }
}

fn pp_config(config: Option<&str>, h: usize, w: usize) -> PyResult<PostprocessConfig> {
    match config {
        Some(s) => from_json(s),
        None => Ok(PostprocessConfig::for_resolution(h, w)),
    }
}

#[pyfunction]
fn stone_texture(height: usize, width: usize, seed: u64) -> PyImage {
    PyImage {
        inner: surfwatch::synth::stone_texture(height, width, seed),
    }
}

#[pyfunction]
fn reconstruction_error(y: &PyImage, y_tilde: &PyImage) -> PyResult<f64> {
    trainer::reconstruction_error(&y.inner, &y_tilde.inner).map_err(py_err)
}

#[pyfunction]
fn match_colors(x: &PyImage, x_hat: &PyImage) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: postprocess::match_colors(&x.inner, &x_hat.inner).map_err(py_err)?,
    })
}

#[pyfunction]
fn matrix_subtraction(x: &PyImage, x_hat: &PyImage) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&postprocess::matrix_subtraction(&x.inner, &x_hat.inner).map_err(py_err)?))
}

#[pyfunction]
#[pyo3(signature = (x, y, window=8))]
fn ssim_map(x: &PyImage, y: &PyImage, window: usize) -> PyResult<Vec<Vec<f64>>> {
    let params = postprocess::SsimParams {
        window,
        ..PostprocessConfig::default().ssim_params()
    };
    Ok(rows(&postprocess::ssim_map(&x.inner, &y.inner, &params).map_err(py_err)?))
}

/// Post-processing of an (input, reconstruction) pair; `config` is a JSON post-processing configuration.
#[pyfunction]
#[pyo3(signature = (x, x_hat, config=None))]
fn detect_pair(x: &PyImage, x_hat: &PyImage, config: Option<&str>) -> PyResult<PyReport> {
    let cfg = pp_config(config, x.inner.height(), x.inner.width())?;
    Ok(PyReport {
        inner: postprocess::detect_pair(&x.inner, &x_hat.inner, &cfg).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (x, model, config=None))]
fn detect(x: &PyImage, model: &mut PyModel, config: Option<&str>) -> PyResult<PyReport> {
    let cfg = pp_config(config, x.inner.height(), x.inner.width())?;
    Ok(PyReport {
        inner: postprocess::detect(&x.inner, &mut model.inner.model, &cfg).map_err(py_err)?,
    })
}

/// Returns a JSON post-processing configuration with thresholds calibrated on `clean`.
#[pyfunction]
#[pyo3(signature = (model, clean, config=None))]
fn calibrate(model: &mut PyModel, clean: Vec<PyImage>, config: Option<&str>) -> PyResult<String> {
    let n = model.inner.network_config().clone();
    let cfg = pp_config(config, n.input_height, n.input_width)?;
    let imgs: Vec<ImageTensor> = clean.into_iter().map(|i| i.inner).collect();
    let out = postprocess::calibrate(&mut model.inner.model, &imgs, &cfg, &Default::default()).map_err(py_err)?;
    to_json(&out)
}

#[pyfunction]
fn anomaly_categories() -> Vec<&'static str> {
    AnomalyCategory::ALL.iter().map(|c| c.name()).collect()
}

#[pyfunction]
#[pyo3(signature = (x, category, seed, intensity=1.0))]
fn inject_anomaly(x: &PyImage, category: &str, seed: u64, intensity: f64) -> PyResult<(PyImage, PyMask)> {
    let spec = AnomalySpec {
        intensity,
        ..AnomalySpec::new(category.parse().map_err(py_err)?, seed)
    };
    let (img, mask) = inject(&x.inner, &spec).map_err(py_err)?;
    Ok((PyImage { inner: img }, PyMask { inner: mask }))
}

/// Exposure shift (EV stops) followed by a white-balance shift (kelvin).
#[pyfunction]
fn augment(x: &PyImage, delta_ev: f64, delta_kelvin: f64) -> PyResult<PyImage> {
    let p = AugmentationParams {
        delta_ev,
        delta_kelvin,
        seed: 0,
    };
    Ok(PyImage {
        inner: p.apply(&x.inner).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (x, grid_cols=3, grid_rows=2))]
fn partition_regions(x: &PyImage, grid_cols: usize, grid_rows: usize) -> PyResult<Vec<PyImage>> {
    let spec = RegionSpec {
        grid_cols,
        grid_rows,
        ..RegionSpec::default()
    };
    Ok(preprocess::partition_regions(&x.inner, &spec)
        .map_err(py_err)?
        .into_iter()
        .map(|inner| PyImage { inner })
        .collect())
}

/// Builds a dataset manifest and returns it as JSON.
#[pyfunction]
#[pyo3(signature = (source_dir, n_aug_per_image=2, held_out=9, seed=0, exclusions=None, region=None))]
fn build_dataset(
    source_dir: PathBuf,
    n_aug_per_image: usize,
    held_out: usize,
    seed: u64,
    exclusions: Option<PathBuf>,
    region: Option<&str>,
) -> PyResult<String> {
    let spec: RegionSpec = match region {
        Some(s) => from_json(s)?,
        None => RegionSpec::default(),
    };
    let m = preprocess::build_dataset(
        &source_dir,
        exclusions.as_deref(),
        &spec,
        n_aug_per_image,
        held_out,
        seed,
        AugmentationBounds::default(),
    )
    .map_err(py_err)?;
    m.to_json().map_err(py_err)
}

/// Trains one model on in-memory images. `network` and `train` are JSON configurations.
#[pyfunction]
#[pyo3(signature = (train, held_out, network=None, config=None, region=0))]
fn train_region(
    py: Python<'_>,
    train: Vec<PyImage>,
    held_out: Vec<PyImage>,
    network: Option<&str>,
    config: Option<&str>,
    region: usize,
) -> PyResult<PyModel> {
    let net: NetworkConfig = match network {
        Some(s) => from_json(s)?,
        None => NetworkConfig::desk_scale(),
    };
    let cfg: TrainConfig = match config {
        Some(s) => from_json(s)?,
        None => TrainConfig::default(),
    };
    let data = RegionDataset::new(
        region,
        train.into_iter().map(|i| i.inner).collect(),
        held_out.into_iter().map(|i| i.inner).collect(),
    );
    let ckpt = py
        .detach(|| trainer::train_region(&data, &net, &cfg, |_| {}))
        .map_err(py_err)?;
    Ok(PyModel { inner: ckpt })
}

#[pymodule]
fn surfwatch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(stone_texture, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruction_error, m)?)?;
    m.add_function(wrap_pyfunction!(match_colors, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_subtraction, m)?)?;
    m.add_function(wrap_pyfunction!(ssim_map, m)?)?;
    m.add_function(wrap_pyfunction!(detect_pair, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(anomaly_categories, m)?)?;
    m.add_function(wrap_pyfunction!(inject_anomaly, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(partition_regions, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_region, m)?)?;
    Ok(())
}
