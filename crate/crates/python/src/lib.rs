//! Python bindings. Images cross the boundary as 4-D NCHW numpy arrays.

use numpy::{IntoPyArray, PyArray4, PyArrayMethods, PyReadonlyArray4, PyUntypedArrayMethods};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use subband::checkpoint::Checkpoint;
use subband::cost::{model_cost, reduction};
use subband::frontend::{node_label, subband_label};
use subband::{Error, Shape, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_tensor<T: subband::Scalar + numpy::Element>(x: PyReadonlyArray4<'_, T>) -> PyResult<Tensor<T>> {
    let d = x.shape();
    let shape = Shape::new(d[0], d[1], d[2], d[3]);
    let data = x.as_array().iter().copied().collect();
    Tensor::from_vec(shape, data).map_err(py_err)
}

fn to_array<'py, T: subband::Scalar + numpy::Element>(py: Python<'py>, t: Tensor<T>) -> PyResult<Bound<'py, PyArray4<T>>> {
    let s = t.shape();
    t.into_vec().into_pyarray(py).reshape([s.n, s.c, s.h, s.w])
}

/// A model description: preset name, TOML text or TOML file.
#[pyclass(name = "Config", module = "subband")]
#[derive(Clone)]
pub struct PyConfig {
    inner: subband::ModelConfig,
}

#[pymethods]
impl PyConfig {
    /// Looks up a preset by name, or reads a TOML file.
    #[staticmethod]
    fn load(name_or_path: &str) -> PyResult<Self> {
        subband::ModelConfig::load(name_or_path).map(|inner| PyConfig { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        subband::ModelConfig::from_toml(text).map(|inner| PyConfig { inner }).map_err(py_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn input(&self) -> (usize, usize, usize) {
        let [c, h, w] = self.inner.input;
        (c, h, w)
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes
    }

    /// Copy with a different frontend mode ("asd", "casd" or "wsd").
    fn with_frontend(&self, mode: &str) -> PyResult<Self> {
        let mode = mode.parse().map_err(py_err)?;
        self.inner.clone().with_frontend_mode(mode).map(|inner| PyConfig { inner }).map_err(py_err)
    }

    /// Analytic operation counts, optionally with reductions against `baseline`.
    #[pyo3(signature = (baseline = None))]
    fn cost<'py>(&self, py: Python<'py>, baseline: Option<&PyConfig>) -> PyResult<Bound<'py, PyDict>> {
        let r = model_cost(&self.inner);
        let out = PyDict::new(py);
        let rows = r
            .rows
            .iter()
            .map(|l| {
                let d = PyDict::new(py);
                d.set_item("layer", &l.id)?;
                d.set_item("count", l.count)?;
                d.set_item("mults", l.mults)?;
                d.set_item("adds", l.adds)?;
                d.set_item("other", l.other)?;
                Ok(d)
            })
            .collect::<PyResult<Vec<_>>>()?;
        out.set_item("name", &r.name)?;
        out.set_item("layers", rows)?;
        out.set_item("macs", r.inference.macs())?;
        out.set_item("mults", r.inference.mults)?;
        out.set_item("adds", r.inference.adds)?;
        out.set_item("training_mults", r.training.mults)?;
        out.set_item("training_adds", r.training.adds)?;
        out.set_item("trainable_params", r.trainable_params)?;
        if let Some(b) = baseline {
            let b = model_cost(&b.inner);
            out.set_item("mult_reduction_pct", reduction(r.inference.mults, b.inference.mults))?;
            out.set_item("add_reduction_pct", reduction(r.inference.adds, b.inference.adds))?;
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("Config({:?})", self.inner.name)
    }
}

/// A float32 network built from a [`PyConfig`] or loaded from a checkpoint.
#[pyclass(name = "Model", module = "subband")]
pub struct PyModel {
    inner: subband::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyConfig, seed: u64) -> PyResult<Self> {
        subband::Model::build(&config.inner, seed).map(|inner| PyModel { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = Checkpoint::load(path).and_then(|c| c.model()).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    /// Writes the weights without training state.
    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::capture(&self.inner, None).save(path).map_err(py_err)
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig { inner: self.inner.config().clone() }
    }

    /// `(trainable parameters, bytes)`.
    fn parameter_count(&self) -> (usize, usize) {
        self.inner.parameter_count()
    }

    /// Logits, shape `(n, classes, 1, 1)`.
    fn predict<'py>(&self, py: Python<'py>, x: PyReadonlyArray4<'py, f32>) -> PyResult<Bound<'py, PyArray4<f32>>> {
        let x = to_tensor(x)?;
        let y = py.allow_threads(|| self.inner.predict(&x)).map_err(py_err)?;
        to_array(py, y)
    }

    /// Class probabilities, shape `(n, classes, 1, 1)`.
    fn predict_proba<'py>(&self, py: Python<'py>, x: PyReadonlyArray4<'py, f32>) -> PyResult<Bound<'py, PyArray4<f32>>> {
        let x = to_tensor(x)?;
        let y = py.allow_threads(|| self.inner.predict(&x)).map_err(py_err)?;
        to_array(py, subband::ops::softmax(&y))
    }

    /// Frontend subbands of `x` in leaf order; empty for a baseline model.
    fn subbands<'py>(&self, py: Python<'py>, x: PyReadonlyArray4<'py, f32>) -> PyResult<Vec<Bound<'py, PyArray4<f32>>>> {
        let Some(fe) = self.inner.frontend() else { return Ok(Vec::new()) };
        let x = to_tensor(x)?;
        let (bands, _) = fe.decompose(&x).map_err(py_err)?;
        bands.into_iter().map(|b| to_array(py, b)).collect()
    }

    /// Copy with weights and biases rounded to `bits` (8, 16 or 32).
    fn quantize_weights(&self, bits: u32) -> PyResult<Self> {
        subband::quant::quantize_weights(&self.inner, bits).map(|inner| PyModel { inner }).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Model({:?}, {} parameters)", self.inner.config().name, self.inner.parameter_count().0)
    }
}

/// Stand-alone float64 subband decomposition tree.
#[pyclass(name = "Frontend", module = "subband")]
pub struct PyFrontend {
    inner: subband::Frontend<f64>,
}

#[pymethods]
impl PyFrontend {
    #[new]
    #[pyo3(signature = (mode, depth, channels = 1, seed = 0))]
    fn new(mode: &str, depth: usize, channels: usize, seed: u64) -> PyResult<Self> {
        let mode = mode.parse().map_err(py_err)?;
        let spec = subband::FrontendSpec::new(mode, depth, channels);
        subband::Frontend::init(spec, seed).map(|inner| PyFrontend { inner }).map_err(py_err)
    }

    fn decompose<'py>(&self, py: Python<'py>, x: PyReadonlyArray4<'py, f64>) -> PyResult<Vec<Bound<'py, PyArray4<f64>>>> {
        let x = to_tensor(x)?;
        let (bands, _) = self.inner.decompose(&x).map_err(py_err)?;
        bands.into_iter().map(|b| to_array(py, b)).collect()
    }

    /// Labels of the leaves, in the order `decompose` returns them.
    fn subband_labels(&self) -> Vec<String> {
        let depth = self.inner.spec().depth;
        (0..self.inner.spec().subband_count()).map(|j| subband_label(depth, j)).collect()
    }

    fn node_labels(&self) -> Vec<String> {
        (0..self.inner.nodes().len()).map(node_label).collect()
    }
}

#[pyfunction]
fn presets() -> Vec<String> {
    subband::model::preset_names().map(str::to_string).collect()
}

/// Uniform `bits`-bit quantisation of inputs in [0, 1].
#[pyfunction]
fn quantize_input<'py>(py: Python<'py>, x: PyReadonlyArray4<'py, f32>, bits: u32) -> PyResult<Bound<'py, PyArray4<f32>>> {
    let q = subband::quant::quantize_input(&to_tensor(x)?, bits).map_err(py_err)?;
    to_array(py, q)
}

#[pymodule(name = "subband")]
fn subband_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyFrontend>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_input, m)?)?;
    Ok(())
}
