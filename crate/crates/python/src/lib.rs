//! Python bindings. Sequences cross the boundary as nested lists of floats
//! (`frames[t][c]`); configs and filter specs as JSON strings.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use smoothnet::data::{make_dataset, Layout, MotionSpec, NoiseSpec, Pair, SequenceMeta, Units};
use smoothnet::numerics::Matrix;
use smoothnet::trainer::TrainConfig;

fn to_py(e: smoothnet::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn parse_name<T: serde::de::DeserializeOwned>(name: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} '{name}'")))
}

/// A pose sequence of `len` frames by `channels` values.
#[pyclass(name = "PoseSequence", module = "smoothnet_py", skip_from_py_object)]
#[derive(Clone)]
struct PySequence {
    inner: smoothnet::PoseSequence,
}

#[pymethods]
impl PySequence {
    /// `layout` is "generic", "xy" or "xyz"; joints and dims follow from it
    /// and the channel count.
    #[new]
    #[pyo3(signature = (frames, fps=30.0, layout="generic", units="unitless"))]
    fn new(frames: Vec<Vec<f64>>, fps: f64, layout: &str, units: &str) -> PyResult<Self> {
        let rows = frames.len();
        let cols = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("frames must all have the same length"));
        }
        let layout: Layout = parse_name(layout, "layout")?;
        let units: Units = parse_name(units, "units")?;
        let meta = match layout {
            Layout::Generic => SequenceMeta { units, ..SequenceMeta::generic(cols, fps) },
            Layout::Xy => SequenceMeta::xy(cols / 2, fps, units),
            Layout::Xyz => SequenceMeta::xyz(cols / 3, fps, units),
        };
        if meta.channels() != cols {
            return Err(PyValueError::new_err(format!("{cols} channels do not fit layout {layout:?}")));
        }
        let m = Matrix::from_vec(rows, cols, frames.concat()).map_err(to_py)?;
        Ok(Self {
            inner: smoothnet::PoseSequence::new(meta, m).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: smoothnet::PoseSequence::from_json(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: smoothnet::data::load_sequence(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        smoothnet::data::save_sequence(path, &self.inner).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn frames(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|t| self.inner.frame(t).to_vec()).collect()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.fps()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PoseSequence(len={}, channels={})", self.inner.len(), self.inner.channels())
    }
}

/// Trained model weights plus training metadata.
#[pyclass(name = "Checkpoint", module = "smoothnet_py")]
struct PyCheckpoint {
    inner: smoothnet::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: smoothnet::Checkpoint::load(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: smoothnet::Checkpoint::from_json(text).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.model.window()
    }

    /// Sliding-window smoothing with step `step`.
    #[pyo3(signature = (seq, step=1))]
    fn smooth(&self, py: Python<'_>, seq: &PySequence, step: usize) -> PyResult<PySequence> {
        let inner = py
            .detach(|| smoothnet::windowing::smooth_with_checkpoint(&self.inner, &seq.inner, step))
            .map_err(to_py)?;
        Ok(PySequence { inner })
    }
}

/// Applies a filter given as JSON, e.g. `{"kind": "gaussian", "window": 9, "sigma": 2}`.
#[pyfunction]
fn apply_filter(seq: &PySequence, spec: &str) -> PyResult<PySequence> {
    let spec: smoothnet::FilterSpec = parse_json(spec, "filter spec")?;
    Ok(PySequence {
        inner: smoothnet::apply_filter(&seq.inner, &spec).map_err(to_py)?,
    })
}

/// MPJPE, PA-MPJPE (None when undefined), Accel and the worst-1% variants.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pred: &PySequence, gt: &PySequence) -> PyResult<Bound<'py, PyDict>> {
    let r = smoothnet::evaluate(&pred.inner, &gt.inner).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mpjpe", r.mpjpe)?;
    d.set_item("pa_mpjpe", r.pa_mpjpe)?;
    d.set_item("accel", r.accel)?;
    d.set_item("mpjpe_worst1", r.mpjpe_worst1)?;
    d.set_item("accel_worst1", r.accel_worst1)?;
    d.set_item("per_frame_mpjpe", r.per_frame_mpjpe)?;
    d.set_item("per_frame_accel", r.per_frame_accel)?;
    Ok(d)
}

type PairList = Vec<(PySequence, PySequence)>;

/// Synthetic noisy/clean pairs: returns `(train, test)` lists of
/// `(noisy, clean)` tuples.
#[pyfunction]
#[pyo3(signature = (motion_spec, noise_spec, count, split=0.8))]
fn synth_dataset(motion_spec: &str, noise_spec: &str, count: usize, split: f64) -> PyResult<(PairList, PairList)> {
    let motion: MotionSpec = parse_json(motion_spec, "motion spec")?;
    let noise: NoiseSpec = parse_json(noise_spec, "noise spec")?;
    let ds = make_dataset(&motion, &noise, count, split).map_err(to_py)?;
    let wrap = |v: Vec<Pair>| {
        v.into_iter()
            .map(|p| (PySequence { inner: p.noisy }, PySequence { inner: p.clean }))
            .collect()
    };
    Ok((wrap(ds.train), wrap(ds.test)))
}

fn unwrap_pairs(v: Vec<(PyRef<'_, PySequence>, PyRef<'_, PySequence>)>) -> Vec<Pair> {
    v.into_iter()
        .map(|(n, c)| Pair {
            noisy: n.inner.clone(),
            clean: c.inner.clone(),
        })
        .collect()
}

/// Trains from a JSON config on `(noisy, clean)` pairs.
#[pyfunction]
#[pyo3(signature = (config, train_pairs, test_pairs=Vec::new()))]
fn train(
    py: Python<'_>,
    config: &str,
    train_pairs: Vec<(PyRef<'_, PySequence>, PyRef<'_, PySequence>)>,
    test_pairs: Vec<(PyRef<'_, PySequence>, PyRef<'_, PySequence>)>,
) -> PyResult<PyCheckpoint> {
    let cfg: TrainConfig = parse_json(config, "training config")?;
    let (tr, te) = (unwrap_pairs(train_pairs), unwrap_pairs(test_pairs));
    let out = py.detach(|| smoothnet::train(&cfg, &tr, &te)).map_err(to_py)?;
    Ok(PyCheckpoint { inner: out.checkpoint })
}

#[pymodule]
fn smoothnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(apply_filter, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
