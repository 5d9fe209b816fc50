//! Python bindings: synthetic data, the road network, training, metrics and
//! the gradient-check suite. Rasters travel as flat row-major lists.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spin_road::config::RunConfig;
use spin_road::data::{self, Split, SynthOptions};
use spin_road::metrics::{self, evaluate, mask_to_graph, MetricsReport};
use spin_road::network::{Checkpoint, Model as CoreModel};
use spin_road::spin::{pyramid_param_count, SpinDims, SpinVariant};
use spin_road::train::{fit, LogRow};
use spin_road::{gradsuite, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        Error::Checkpoint(_) | Error::NonScalarLoss(_) | Error::MissingGrad(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config(toml: Option<&str>) -> PyResult<RunConfig> {
    toml.map_or_else(|| Ok(RunConfig::default()), RunConfig::parse).map_err(py_err)
}

/// One image with its road mask and orientation classes.
#[pyclass(name = "Sample", from_py_object)]
#[derive(Clone)]
pub struct PySample {
    inner: data::Sample,
}

#[pymethods]
impl PySample {
    #[new]
    fn new(height: usize, width: usize, image: Vec<f32>, mask: Vec<u8>, orient: Option<Vec<u8>>) -> PyResult<Self> {
        let orient = orient.unwrap_or_else(|| vec![0; height * width]);
        let inner = data::Sample {
            height,
            width,
            image,
            mask,
            orient,
            centerlines: Vec::new(),
        };
        inner.check().map_err(py_err)?;
        Ok(PySample { inner })
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    /// `3×H×W` values in `[0, 1]`.
    #[getter]
    fn image(&self) -> Vec<f32> {
        self.inner.image.clone()
    }

    #[getter]
    fn mask(&self) -> Vec<u8> {
        self.inner.mask.clone()
    }

    #[getter]
    fn orient(&self) -> Vec<u8> {
        self.inner.orient.clone()
    }

    fn road_pixels(&self) -> usize {
        self.inner.road_pixels()
    }

    fn __repr__(&self) -> String {
        format!("Sample({}×{}, {} road px)", self.inner.height, self.inner.width, self.inner.road_pixels())
    }
}

fn unwrap_samples(samples: &[PySample]) -> Vec<data::Sample> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("precision", r.precision)?;
    d.set_item("recall", r.recall)?;
    d.set_item("f1", r.f1)?;
    d.set_item("iou_a", r.iou_a)?;
    d.set_item("iou_r", r.iou_r)?;
    d.set_item("apls", r.apls)?;
    Ok(d)
}

fn row_dict<'py>(py: Python<'py>, r: &LogRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("iter", r.iter)?;
    d.set_item("lr", r.lr)?;
    d.set_item("L_seg", r.l_seg)?;
    d.set_item("L_orient", r.l_orient)?;
    d.set_item("L_final", r.l_final)?;
    d.set_item("val_F1", r.val_f1)?;
    d.set_item("val_IoU", r.val_iou)?;
    Ok(d)
}

/// The road network with its weights (32-bit).
#[pyclass(name = "Model")]
pub struct PyModel {
    inner: CoreModel<f32>,
}

#[pymethods]
impl PyModel {
    /// Builds a fresh network from the `[network]` section of a TOML config.
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = self::config(config)?;
        Ok(PyModel {
            inner: CoreModel::new(&cfg.network, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = Checkpoint::<f32>::load(path).and_then(Checkpoint::into_model).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::from_model(&self.inner, None).save(path).map_err(py_err)
    }

    fn count_parameters(&self) -> usize {
        self.inner.count_parameters()
    }

    #[getter]
    fn spin(&self) -> &'static str {
        self.inner.config().spin.name()
    }

    /// Road probabilities and orientation classes, each `H×W`.
    fn predict(&self, image: Vec<f32>, height: usize, width: usize) -> PyResult<(Vec<f32>, Vec<u8>)> {
        let p = self.inner.predict_image(&image, height, width).map_err(py_err)?;
        Ok((p.road_prob, p.orientation))
    }

    /// Trains in place and returns the per-epoch log rows.
    #[pyo3(signature = (train, val=Vec::new(), config=None, seed=0))]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        train: Vec<PySample>,
        val: Vec<PySample>,
        config: Option<&str>,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = self::config(config)?;
        let log = fit(&mut self.inner, &unwrap_samples(&train), &unwrap_samples(&val), &cfg.train, seed, None, None)
            .map_err(py_err)?;
        log.rows.iter().map(|r| row_dict(py, r)).collect()
    }

    fn evaluate<'py>(&self, py: Python<'py>, samples: Vec<PySample>) -> PyResult<Bound<'py, PyDict>> {
        let r = evaluate(&self.inner, &unwrap_samples(&samples), &Default::default()).map_err(py_err)?;
        report_dict(py, &r)
    }
}

/// Deterministic synthetic road scenes.
#[pyfunction]
#[pyo3(signature = (seed, count, size=64, occluders=false))]
fn synthesize(seed: u64, count: usize, size: usize, occluders: bool) -> PyResult<Vec<PySample>> {
    let opts = SynthOptions {
        occluders,
        ..SynthOptions::default()
    };
    let v = data::generate_synthetic(seed, count, size, &opts).map_err(py_err)?;
    Ok(v.into_iter().map(|inner| PySample { inner }).collect())
}

/// Samples of a dataset directory, optionally one split ("train", "val", "test").
#[pyfunction]
#[pyo3(signature = (dir, split=None))]
fn read_dataset(dir: &str, split: Option<&str>) -> PyResult<Vec<PySample>> {
    let split = match split {
        None => None,
        Some("train") => Some(Split::Train),
        Some("val") => Some(Split::Val),
        Some("test") => Some(Split::Test),
        Some(other) => return Err(PyValueError::new_err(format!("unknown split `{other}`"))),
    };
    let v = data::read_dataset(std::path::Path::new(dir), split).map_err(py_err)?;
    Ok(v.into_iter().map(|(_, _, inner)| PySample { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (probs, gt, threshold=0.5))]
fn pixel_metrics<'py>(py: Python<'py>, probs: Vec<f32>, gt: Vec<u8>, threshold: f32) -> PyResult<Bound<'py, PyDict>> {
    let c = metrics::pixel_metrics(&probs, &gt, threshold).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("precision", c.precision())?;
    d.set_item("recall", c.recall())?;
    d.set_item("f1", c.f1())?;
    d.set_item("iou", c.iou())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, height, width, buffer=4))]
fn relaxed_iou(pred: Vec<u8>, gt: Vec<u8>, height: usize, width: usize, buffer: usize) -> PyResult<f64> {
    metrics::relaxed_iou(&pred, &gt, height, width, buffer).map_err(py_err)
}

/// APLS between the graphs extracted from two binary masks.
#[pyfunction]
#[pyo3(signature = (gt, pred, height, width, radius=4.0))]
fn mask_apls(gt: Vec<u8>, pred: Vec<u8>, height: usize, width: usize, radius: f64) -> PyResult<f64> {
    check_len(gt.len(), height * width)?;
    check_len(pred.len(), height * width)?;
    let g = mask_to_graph(&gt, height, width);
    let p = mask_to_graph(&pred, height, width);
    metrics::apls(&g, &p, radius).map_err(py_err)
}

fn check_len(got: usize, want: usize) -> PyResult<()> {
    if got == want {
        Ok(())
    } else {
        Err(PyValueError::new_err(format!("mask has {got} values, expected {want}")))
    }
}

/// Learning rate at an epoch under the configured schedule.
#[pyfunction]
#[pyo3(signature = (epoch, config=None))]
fn lr_at(epoch: usize, config: Option<&str>) -> PyResult<f64> {
    Ok(self::config(config)?.train.schedule.lr_at(epoch))
}

/// Learnable parameters of a three-scale SPIN pyramid.
#[pyfunction]
#[pyo3(signature = (channels, variant="full"))]
fn spin_parameter_count(channels: usize, variant: &str) -> PyResult<usize> {
    let v: SpinVariant = variant.parse().map_err(py_err)?;
    Ok(pyramid_param_count(SpinDims::for_channels(channels), v))
}

/// `(name, max relative error, tolerance, passed)` for every registered check.
#[pyfunction]
#[pyo3(signature = (seed=1))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let reports = gradsuite::run(seed).map_err(py_err)?;
    Ok(reports
        .into_iter()
        .map(|r| {
            let ok = r.passed();
            (r.name, r.max_rel_error, r.tolerance, ok)
        })
        .collect())
}

#[pymodule]
fn spinroad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(relaxed_iou, m)?)?;
    m.add_function(wrap_pyfunction!(mask_apls, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(spin_parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
