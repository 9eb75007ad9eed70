//! Python bindings: models, the three ODE methods, simulation and the
//! truncated-chain oracle. Trajectories come back as plain dicts of lists.

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qtransient::{
    exact_transient_moments, simulate_ensemble, solve, zoo, Error, Method, MomentTrajectory, NetworkModel, SolverConfig,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Usage(_) | Error::Domain(_) | Error::Model(_) | Error::Json(_) => PyValueError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A queueing network model.
#[pyclass(name = "Model", module = "qtransient_py", frozen)]
struct PyModel {
    inner: NetworkModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = NetworkModel::from_json(text).map_err(to_py)?;
        inner.ensure_valid().map_err(to_py)?;
        Ok(PyModel { inner })
    }

    /// Retrial network preset 1..=10.
    #[staticmethod]
    fn preset(id: usize) -> PyResult<Self> {
        Ok(PyModel {
            inner: zoo::retrial_preset_model(id).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (horizon = 20.0))]
    fn priority(horizon: f64) -> PyResult<Self> {
        let p = zoo::priority_study(horizon).map_err(to_py)?;
        Ok(PyModel {
            inner: zoo::build_priority(&p).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (horizon = 20.0))]
    fn peer(horizon: f64) -> PyResult<Self> {
        Ok(PyModel {
            inner: zoo::build_peer(&zoo::peer_study(horizon)).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    #[getter]
    fn initial_state(&self) -> Vec<i64> {
        self.inner.initial_state.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(dimension={}, transitions={}, horizon={})",
            self.inner.dimension,
            self.inner.num_transitions(),
            self.inner.horizon
        )
    }
}

fn trajectory<'py>(py: Python<'py>, tr: &MomentTrajectory, n: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let d = tr.dimension();
    let out = PyDict::new(py);
    out.set_item("method", tr.method.to_string())?;
    out.set_item("t", tr.times())?;
    let mean: Vec<Vec<f64>> = tr.samples.iter().map(|s| s.mean.iter().copied().collect()).collect();
    out.set_item("mean", mean)?;
    let cov: Vec<Vec<Vec<f64>>> = tr
        .samples
        .iter()
        .map(|s| (0..d).map(|i| (0..d).map(|j| s.cov[(i, j)]).collect()).collect())
        .collect();
    out.set_item("cov", cov)?;
    out.set_item("warnings", tr.warnings.clone())?;
    if let Some(n) = n {
        out.set_item("n", n)?;
    }
    Ok(out)
}

/// Integrates `fluid`, `adjusted` or `measure-zero` and samples at `grid`.
#[pyfunction]
#[pyo3(signature = (model, method, grid, dt = 0.01))]
fn moments<'py>(
    py: Python<'py>,
    model: &PyModel,
    method: &str,
    grid: Vec<f64>,
    dt: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let method: Method = method.parse().map_err(to_py)?;
    let cfg = SolverConfig::new(method, grid).with_dt(dt);
    let tr = py.detach(|| solve(&model.inner, &cfg)).map_err(to_py)?;
    trajectory(py, &tr, None)
}

/// Event-driven simulation of `reps` independent paths.
#[pyfunction]
#[pyo3(signature = (model, reps, grid, seed = 0, workers = 1))]
fn simulate<'py>(
    py: Python<'py>,
    model: &PyModel,
    reps: usize,
    grid: Vec<f64>,
    seed: u64,
    workers: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let stats = py
        .detach(|| simulate_ensemble(&model.inner, reps, seed, &grid, workers.max(1)))
        .map_err(to_py)?;
    let out = trajectory(py, &stats.to_trajectory(), Some(stats.n))?;
    if stats.cov.is_none() {
        out.set_item("cov", py.None())?;
    }
    Ok(out)
}

/// Moments of the chain truncated to `0..=caps[i]` in each component.
#[pyfunction]
fn exact<'py>(py: Python<'py>, model: &PyModel, caps: Vec<usize>, grid: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let tr = py
        .detach(|| exact_transient_moments(&model.inner, &caps, &grid))
        .map_err(to_py)?;
    trajectory(py, &tr, None)
}

#[pymodule]
fn qtransient_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(exact, m)?)?;
    Ok(())
}
