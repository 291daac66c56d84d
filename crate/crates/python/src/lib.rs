//! Python bindings. Results come back as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use judgeflow::experiments::{emit_figure_series, FigureId, FigureInput};
use judgeflow::instance::{presets, Budget, InstanceFile, SimSettings};
use judgeflow::phases::{single_class_phase, two_class_report};
use judgeflow::simulator::{detect_instability, integerized, SimConfig};
use judgeflow::{Error, PolicyKind, PolicySpec, QualityParams};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Deadlock { .. } | Error::Solver(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated model instance.
#[pyclass(name = "Instance", module = "judgeflow", from_py_object)]
#[derive(Clone)]
pub struct PyInstance {
    inner: judgeflow::Instance,
    budget: Option<Budget>,
    sim: Option<SimSettings>,
}

impl PyInstance {
    fn from_file(file: InstanceFile) -> PyResult<Self> {
        Ok(PyInstance {
            inner: file.instance().map_err(to_py)?,
            budget: file.budget,
            sim: file.sim,
        })
    }
}

#[pymethods]
impl PyInstance {
    /// Parses an instance from TOML text.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::from_file(InstanceFile::parse(text, "<string>").map_err(to_py)?)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Self::from_file(InstanceFile::load(path).map_err(to_py)?)
    }

    /// Built-in examples: `single_class`, `single_class_abundant`,
    /// `single_class_feedback`, `two_class`.
    #[staticmethod]
    #[pyo3(signature = (name, n_h))]
    fn preset(name: &str, n_h: f64) -> PyResult<Self> {
        let (inner, budget) = match name {
            "single_class" => (presets::single_class(n_h), None),
            "single_class_abundant" => (presets::single_class_abundant(n_h), None),
            "single_class_feedback" => (presets::single_class_feedback(n_h), None),
            "two_class" => (presets::two_class(n_h), Some(presets::two_class_budget())),
            _ => return Err(PyValueError::new_err(format!("unknown preset `{name}`"))),
        };
        Ok(PyInstance {
            inner,
            budget,
            sim: None,
        })
    }

    fn to_toml(&self) -> String {
        let mut file = InstanceFile::from_instance(&self.inner);
        file.budget = self.budget;
        file.sim = self.sim;
        file.to_toml()
    }

    fn with_n_h(&self, n_h: f64) -> PyResult<Self> {
        let inner = self.inner.with_n_h(n_h);
        inner.validate().map_err(to_py)?;
        Ok(PyInstance { inner, ..self.clone() })
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn n_w(&self) -> f64 {
        self.inner.n_w
    }

    #[getter]
    fn n_j(&self) -> f64 {
        self.inner.n_j
    }

    #[getter]
    fn n_h(&self) -> f64 {
        self.inner.n_h
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(classes={}, n_w={}, n_j={}, n_h={})",
            self.inner.num_classes(),
            self.inner.n_w,
            self.inner.n_j,
            self.inner.n_h
        )
    }
}

/// Pass probability, posterior quality and related quantities of one judge.
#[pyfunction]
#[pyo3(signature = (alpha, beta_i, beta_ii))]
fn derive_quality<'py>(py: Python<'py>, alpha: f64, beta_i: f64, beta_ii: f64) -> PyResult<Bound<'py, PyAny>> {
    let d = judgeflow::derive_quality(&QualityParams::new(alpha, beta_i, beta_ii)).map_err(to_py)?;
    to_dict(py, &d)
}

/// Steady-state fluid optimum; `feedback=True` solves the rework model.
#[pyfunction]
#[pyo3(signature = (instance, feedback = false))]
fn solve<'py>(py: Python<'py>, instance: &PyInstance, feedback: bool) -> PyResult<Bound<'py, PyAny>> {
    if feedback {
        to_dict(py, &judgeflow::solve_feedback(&instance.inner).map_err(to_py)?)
    } else {
        to_dict(py, &judgeflow::solve_steady_state(&instance.inner).map_err(to_py)?)
    }
}

/// Closed-form phase analysis of a one- or two-class instance.
#[pyfunction]
fn phases<'py>(py: Python<'py>, instance: &PyInstance) -> PyResult<Bound<'py, PyAny>> {
    match instance.inner.num_classes() {
        1 => to_dict(py, &single_class_phase(&instance.inner).map_err(to_py)?),
        2 => to_dict(py, &two_class_report(&instance.inner).map_err(to_py)?),
        _ => Err(PyValueError::new_err("closed-form analysis requires 1 or 2 classes")),
    }
}

/// Budget-constrained choice of worker and judge capacity. Falls back to the
/// instance's own budget when `budget` is omitted.
#[pyfunction]
#[pyo3(signature = (instance, budget = None, gamma_w = 1.0, gamma_j = 1.0))]
fn capacity_plan<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    budget: Option<f64>,
    gamma_w: f64,
    gamma_j: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let b = match (budget, instance.budget) {
        (Some(b), _) => Budget { b, gamma_w, gamma_j },
        (None, Some(b)) => b,
        (None, None) => return Err(PyValueError::new_err("instance has no budget; pass budget=")),
    };
    to_dict(py, &judgeflow::solve_capacity_plan(&instance.inner, &b).map_err(to_py)?)
}

/// Runs one replication and returns summary metrics, stability verdicts and
/// the sampled queue trajectory.
#[pyfunction]
#[pyo3(signature = (instance, policy = "fluid", scale = None, horizon = None, warmup = None, seed = None, feedback = false))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    policy: &str,
    scale: Option<u32>,
    horizon: Option<f64>,
    warmup: Option<f64>,
    seed: Option<u64>,
    feedback: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut kind: PolicyKind = policy.parse().map_err(to_py)?;
    if feedback && kind == PolicyKind::FluidTracking {
        kind = PolicyKind::FluidTrackingFeedback;
    }
    let mut settings = instance.sim.unwrap_or_default();
    settings.scale_n = scale.unwrap_or(settings.scale_n);
    settings.horizon_t = horizon.unwrap_or(settings.horizon_t);
    settings.warmup = warmup.unwrap_or(settings.warmup);
    settings.seed = seed.unwrap_or(settings.seed);
    let mut cfg = SimConfig::new(instance.inner.clone(), &settings);
    cfg.feedback = feedback;
    cfg.validate().map_err(to_py)?;
    let planned = integerized(&cfg.instance, cfg.scale_n);
    let spec = PolicySpec::for_instance(kind, &planned, feedback).map_err(to_py)?;
    let metrics = py
        .detach(|| judgeflow::run(&cfg, &spec))
        .map_err(to_py)?;
    let stability = detect_instability(&metrics.trajectory, cfg.horizon_t);
    #[derive(Serialize)]
    struct Out<'a> {
        policy: &'static str,
        metrics: &'a judgeflow::SimMetrics,
        stability: judgeflow::simulator::StabilityReport,
    }
    to_dict(
        py,
        &Out {
            policy: kind.name(),
            metrics: &metrics,
            stability,
        },
    )
}

/// Columns of a figure sweep as `{name: [values]}`; `out_dir` also writes
/// the CSV and SVG there.
#[pyfunction]
#[pyo3(signature = (id, instance = None, n_h_grid = None, out_dir = None))]
fn figure<'py>(
    py: Python<'py>,
    id: &str,
    instance: Option<&PyInstance>,
    n_h_grid: Option<Vec<f64>>,
    out_dir: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let id: FigureId = id.parse().map_err(to_py)?;
    let input = FigureInput {
        instance: instance.map(|i| i.inner.clone()),
        budget: instance.and_then(|i| i.budget),
        n_h_grid,
    };
    let series = emit_figure_series(id, &input).map_err(to_py)?;
    if let Some(dir) = out_dir {
        series.write_to(std::path::Path::new(dir)).map_err(to_py)?;
    }
    let columns: serde_json::Map<String, serde_json::Value> = series
        .columns
        .iter()
        .map(|c| {
            let col = series.column(c).unwrap_or_default();
            (c.to_string(), serde_json::json!(col))
        })
        .collect();
    to_dict(py, &columns)
}

#[pymodule(name = "judgeflow")]
fn judgeflow_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(derive_quality, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(phases, m)?)?;
    m.add_function(wrap_pyfunction!(capacity_plan, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(figure, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
