//! Python bindings: quad model, online GP, MPC controller and the episode runner.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gpmpc::dynamics::{linearize_hover, QuadParams};
use gpmpc::harness::{self, ScenarioConfig};
use gpmpc::qpsolve::QpSettings;
use gpmpc::smpc::{MpcConfig, MpcController};
use gpmpc::ssgp::{predict_horizon, GpConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Physical parameters of the quadcopter.
#[pyclass(name = "QuadParams", from_py_object)]
#[derive(Clone)]
struct PyQuadParams {
    inner: QuadParams,
}

#[pymethods]
impl PyQuadParams {
    #[new]
    #[pyo3(signature = (mass=None, drag=None, thrust_max=None))]
    fn new(mass: Option<f64>, drag: Option<f64>, thrust_max: Option<f64>) -> PyResult<Self> {
        let d = QuadParams::default();
        let inner = QuadParams {
            mass: mass.unwrap_or(d.mass),
            drag: drag.unwrap_or(d.drag),
            thrust_max: thrust_max.unwrap_or(d.thrust_max),
            ..d
        };
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mass(&self) -> f64 {
        self.inner.mass
    }

    #[getter]
    fn drag(&self) -> f64 {
        self.inner.drag
    }

    #[getter]
    fn thrust_max(&self) -> f64 {
        self.inner.thrust_max
    }

    fn hover_thrust(&self) -> f64 {
        self.inner.hover_thrust()
    }

    /// Continuous hover linearization `(A, B)` as row lists.
    fn linearize(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let lin = linearize_hover(&self.inner);
        (rows(&lin.a), rows(&lin.b))
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Online state-space GP for one scalar disturbance channel.
#[pyclass(name = "OnlineGp")]
struct PyOnlineGp {
    inner: gpmpc::ssgp::OnlineGp,
}

#[pymethods]
impl PyOnlineGp {
    #[new]
    #[pyo3(signature = (dt=0.1, batch_size=50, order=6))]
    fn new(dt: f64, batch_size: usize, order: usize) -> PyResult<Self> {
        let cfg = GpConfig {
            batch_size,
            order,
            ..GpConfig::default()
        };
        Ok(Self {
            inner: gpmpc::ssgp::OnlineGp::new(cfg, dt).map_err(value_err)?,
        })
    }

    fn push(&mut self, t: f64, y: f64) -> PyResult<()> {
        self.inner.push(t, y).map_err(value_err)
    }

    /// One gradient step; `None` while the window is too short.
    fn train_step(&mut self) -> PyResult<Option<(f64, f64, bool)>> {
        let r = self.inner.train_step().map_err(runtime_err)?;
        Ok(r.map(|r| (r.nll_before, r.nll_after, r.accepted)))
    }

    #[getter]
    fn updates(&self) -> usize {
        self.inner.updates()
    }

    /// `(signal_variance, length_scale, noise_variance)`.
    #[getter]
    fn hyper(&self) -> (f64, f64, f64) {
        let h = self.inner.hyper();
        (h.signal_variance, h.length_scale, h.noise_variance)
    }

    /// `(mean, variance)` of the next `steps` outputs after the newest sample.
    fn predict(&mut self, steps: usize) -> PyResult<Vec<(f64, f64)>> {
        let Some((b, _)) = self.inner.posterior().map_err(runtime_err)? else {
            return Err(PyValueError::new_err("no samples"));
        };
        Ok(predict_horizon(&b, self.inner.model(), steps)
            .iter()
            .map(|o| (o.mean, o.variance))
            .collect())
    }
}

/// Nominal MPC around hover with the default weights and bounds.
#[pyclass(name = "Controller", unsendable)]
struct PyController {
    inner: MpcController,
}

#[pymethods]
impl PyController {
    #[new]
    #[pyo3(signature = (horizon=None, params=None))]
    fn new(horizon: Option<usize>, params: Option<PyQuadParams>) -> PyResult<Self> {
        let mut cfg = MpcConfig::default();
        if let Some(n) = horizon {
            cfg.horizon = n;
        }
        let p = params.map_or_else(QuadParams::default, |p| p.inner);
        Ok(Self {
            inner: MpcController::new(&p, &cfg, &QpSettings::default()).map_err(value_err)?,
        })
    }

    /// Solves for state `x0` (12 values) tracking a constant `target` state.
    #[pyo3(signature = (x0, target=None))]
    fn solve<'py>(&mut self, py: Python<'py>, x0: Vec<f64>, target: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let n = self.inner.config().horizon;
        let x0 = DVector::from_vec(x0);
        let r = DVector::from_vec(target.unwrap_or_else(|| vec![0.0; x0.len()]));
        let out = self
            .inner
            .solve(&x0, &vec![r; n + 1], None)
            .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("u_dev", out.u_dev.as_slice().to_vec())?;
        d.set_item("command", out.command.0.as_slice().to_vec())?;
        d.set_item("status", out.status.to_string())?;
        d.set_item("iterations", out.iterations)?;
        d.set_item("objective", out.objective)?;
        d.set_item("kkt_ok", out.kkt.ok)?;
        Ok(d)
    }
}

/// Scenario configuration in TOML form.
#[pyfunction]
fn default_config() -> String {
    ScenarioConfig::default().to_toml()
}

/// Runs an episode from a TOML scenario; returns metrics and the position trace.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn run_episode<'py>(py: Python<'py>, config: Option<&str>, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = match config {
        Some(text) => ScenarioConfig::from_toml(text).map_err(value_err)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ep = py
        .detach(|| harness::run_episode(&cfg))
        .map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("exit_code", ep.exit_code())?;
    d.set_item("abort", ep.abort.as_ref().map(|a| a.to_string()))?;
    if let Some(m) = &ep.metrics {
        d.set_item("rms", m.rms)?;
        d.set_item("rms_axis", m.rms_axis.as_slice().to_vec())?;
        d.set_item("switch_time", m.switch_time)?;
        d.set_item("solves", m.solves)?;
        d.set_item("mean_step_nominal_ms", m.mean_step_nominal)?;
        d.set_item("mean_step_gp_ms", m.mean_step_gp)?;
    }
    let t: Vec<f64> = ep.log.records.iter().map(|r| r.t).collect();
    let pos: Vec<[f64; 3]> = ep.log.records.iter().map(|r| r.state.position.into()).collect();
    let reference: Vec<[f64; 3]> = ep.log.records.iter().map(|r| r.reference.into()).collect();
    d.set_item("t", t)?;
    d.set_item("position", pos)?;
    d.set_item("reference", reference)?;
    Ok(d)
}

/// Kalman-filter GP against dense regression; `(passed, report)`.
#[pyfunction]
#[pyo3(signature = (batches=20, seed=0))]
fn gp_selftest(batches: usize, seed: u64) -> PyResult<(bool, String)> {
    let r = harness::gp_selftest(batches, seed).map_err(runtime_err)?;
    Ok((r.passed(), r.to_string()))
}

#[pymodule]
fn pygpmpc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuadParams>()?;
    m.add_class::<PyOnlineGp>()?;
    m.add_class::<PyController>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(gp_selftest, m)?)?;
    Ok(())
}
