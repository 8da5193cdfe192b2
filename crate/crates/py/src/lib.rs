//! Python bindings: synthetic data, training strategies, checkpoints and metrics.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mitl::data::{self, Datasets, SessionKey, SynthConfig};
use mitl::metrics::{self, KappaMode};
use mitl::model::{self, FreezeDepth};
use mitl::strategies::{self, Strategy};

fn to_py(e: mitl::Error) -> PyErr {
    match e {
        mitl::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = mitl::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// One recording session: trials x channels x samples with integer labels.
#[pyclass(name = "EpochSet", module = "pymitl", from_py_object)]
#[derive(Clone)]
pub struct PyEpochSet {
    inner: data::EpochSet,
}

#[pymethods]
impl PyEpochSet {
    #[getter]
    fn subject(&self) -> u32 {
        self.inner.subject_id
    }

    #[getter]
    fn session(&self) -> u32 {
        self.inner.session_id
    }

    #[getter]
    fn n_trials(&self) -> usize {
        self.inner.n_trials()
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.inner.n_channels()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn sample_rate_hz(&self) -> f64 {
        self.inner.sample_rate_hz
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.channel_names().to_vec()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    /// Flat row-major samples, `n_trials * n_channels * n_samples` long.
    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    /// One trial as a list of channels.
    fn trial(&self, i: usize) -> PyResult<Vec<Vec<f32>>> {
        if i >= self.inner.n_trials() {
            return Err(PyValueError::new_err(format!("trial {i} out of range")));
        }
        Ok((0..self.inner.n_channels()).map(|c| self.inner.channel(i, c).to_vec()).collect())
    }

    fn select_channels(&self, names: Vec<String>) -> PyResult<Self> {
        Ok(Self { inner: self.inner.select_channels(&names).map_err(to_py)? })
    }

    /// Zero-phase Butterworth high-pass filter.
    #[pyo3(signature = (cutoff_hz = 4.0, order = 4))]
    fn highpass(&self, cutoff_hz: f64, order: usize) -> PyResult<Self> {
        let spec = data::FilterSpec { order, cutoff_hz };
        Ok(Self { inner: data::highpass_filter(&self.inner, &spec).map_err(to_py)? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        data::save_epochset(&self.inner, &dir).map_err(to_py)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: data::load_epochset(&dir).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "EpochSet(subject={}, session={}, trials={}, channels={}, samples={})",
            self.inner.subject_id,
            self.inner.session_id,
            self.inner.n_trials(),
            self.inner.n_channels(),
            self.inner.n_samples()
        )
    }
}

fn collect(sets: &[PyEpochSet]) -> PyResult<Datasets> {
    let mut out = Datasets::new();
    for s in sets {
        if out.insert(s.inner.key(), s.inner.clone()).is_some() {
            return Err(PyValueError::new_err(format!("duplicate session {}", s.inner.key())));
        }
    }
    Ok(out)
}

/// Generate labelled synthetic sessions, two per subject.
#[pyfunction]
#[pyo3(signature = (n_subjects, n_trials, n_channels, n_samples, n_classes, sample_rate_hz = 128.0, difficulty = 0.3, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn synth_generate(
    n_subjects: usize,
    n_trials: usize,
    n_channels: usize,
    n_samples: usize,
    n_classes: usize,
    sample_rate_hz: f64,
    difficulty: f64,
    seed: u64,
) -> PyResult<Vec<PyEpochSet>> {
    let mut cfg = SynthConfig::new(n_subjects, n_trials, n_channels, n_samples, n_classes);
    cfg.sample_rate_hz = sample_rate_hz;
    cfg.difficulty = difficulty;
    cfg.seed = seed;
    let sets = data::synth_generate(&cfg).map_err(to_py)?;
    Ok(sets.into_values().map(|inner| PyEpochSet { inner }).collect())
}

/// Trained model with its architecture, channel order and normalization.
#[pyclass(name = "Checkpoint", module = "pymitl", skip_from_py_object)]
#[derive(Clone)]
pub struct PyCheckpoint {
    inner: model::ModelCheckpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.spec.n_classes
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.inner.spec.n_channels
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.spec.n_samples
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.channel_names.clone()
    }

    fn count_parameters(&self) -> usize {
        self.inner.params.count_parameters()
    }

    /// Copy with a freshly initialised classifier head for `n_classes`.
    #[pyo3(signature = (n_classes, seed = 0))]
    fn replace_head(&self, n_classes: usize, seed: u64) -> PyResult<Self> {
        let inner = self.inner.replace_head(n_classes, &mut mitl::rng::seeded(seed)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Evaluation report of the given sessions, as a dict.
    #[pyo3(signature = (sessions, kappa = "majority"))]
    fn evaluate<'py>(&self, py: Python<'py>, sessions: Vec<PyEpochSet>, kappa: &str) -> PyResult<Bound<'py, PyAny>> {
        let datasets = collect(&sessions)?;
        let keys: Vec<SessionKey> = datasets.keys().copied().collect();
        let report = strategies::evaluate_checkpoint(&self.inner, &datasets, &keys, parse(kappa)?).map_err(to_py)?;
        json_to_py(py, &report)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, &dir).map_err(to_py)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: model::load_checkpoint(&dir).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint(channels={}, samples={}, classes={}, strategy={:?})",
            self.inner.spec.n_channels, self.inner.spec.n_samples, self.inner.spec.n_classes, self.inner.provenance.strategy
        )
    }
}

/// Outcome of training one subject.
#[pyclass(name = "TrainResult", module = "pymitl")]
pub struct PyTrainResult {
    inner: strategies::TrainResult,
}

#[pymethods]
impl PyTrainResult {
    #[getter]
    fn accuracy(&self) -> f64 {
        self.inner.report.accuracy
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.report.kappa
    }

    #[getter]
    fn n_test(&self) -> usize {
        self.inner.report.n_test
    }

    #[getter]
    fn checkpoint(&self) -> PyCheckpoint {
        PyCheckpoint { inner: self.inner.checkpoint.clone() }
    }

    /// Full evaluation report as a dict.
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.report)
    }

    /// Raises if a test session entered training.
    fn check_leakage(&self) -> PyResult<()> {
        self.inner.check_leakage().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainResult(strategy={}, accuracy={:.4}, kappa={:.4})",
            self.inner.strategy, self.inner.report.accuracy, self.inner.report.kappa
        )
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Train with one of the six strategies. Returns `{subject: TrainResult}`.
#[pyfunction]
#[pyo3(signature = (sessions, strategy, epochs = 200, subject = None, freeze_depth = "none", lr = 1e-3, batch_size = 16, seed = 0, pretrained = None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    sessions: Vec<PyEpochSet>,
    strategy: &str,
    epochs: usize,
    subject: Option<u32>,
    freeze_depth: &str,
    lr: f64,
    batch_size: usize,
    seed: u64,
    pretrained: Option<PyRef<'_, PyCheckpoint>>,
) -> PyResult<BTreeMap<u32, PyTrainResult>> {
    let datasets = collect(&sessions)?;
    let mut plan = strategies::TrainingPlan::new(parse::<Strategy>(strategy)?);
    plan.epochs = epochs;
    plan.freeze_depth = parse::<FreezeDepth>(freeze_depth)?;
    plan.lr = lr;
    plan.batch_size = batch_size;
    plan.seed = seed;
    let source = pretrained.map(|p| p.inner.clone());
    if source.is_some() {
        plan.pretrained = Some(PathBuf::from("<memory>"));
    }
    plan.validate().map_err(to_py)?;
    let results = py
        .detach(|| strategies::run_strategy(&datasets, &plan, subject, source.as_ref()))
        .map_err(to_py)?;
    Ok(results.into_iter().map(|(u, inner)| (u, PyTrainResult { inner })).collect())
}

/// Cohen-style kappa; `mode` is "majority" or "cohen".
#[pyfunction]
#[pyo3(signature = (pred, truth, n_classes, mode = "majority"))]
fn kappa(pred: Vec<usize>, truth: Vec<usize>, n_classes: usize, mode: &str) -> PyResult<f64> {
    metrics::kappa_with(parse::<KappaMode>(mode)?, &pred, &truth, n_classes).map_err(to_py)
}

#[pyfunction]
fn accuracy(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    metrics::accuracy(&pred, &truth).map_err(to_py)
}

/// Zero-phase Butterworth high-pass of a single signal.
#[pyfunction]
#[pyo3(signature = (signal, sample_rate_hz, cutoff_hz = 4.0, order = 4))]
fn filtfilt(signal: Vec<f64>, sample_rate_hz: f64, cutoff_hz: f64, order: usize) -> PyResult<Vec<f64>> {
    let f = data::Butterworth::highpass(order, cutoff_hz, sample_rate_hz).map_err(to_py)?;
    Ok(f.filtfilt(&signal))
}

#[pymodule]
fn pymitl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEpochSet>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(kappa, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(filtfilt, m)?)?;
    m.add("STRATEGIES", Strategy::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
