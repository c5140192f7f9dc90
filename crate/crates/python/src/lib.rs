//! Python bindings for the loop-STIRAP library.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stirap_core::adiabatic;
use stirap_core::dynamics::{self, PropagationOptions, StateVector};
use stirap_core::matched::{self, MatchedSpec, ThirdOrderTarget};
use stirap_core::pulses;
use stirap_core::quad::Quadrature;
use stirap_core::scenarios::{self, Designer, RunOptions, SweepOptions};
use stirap_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::InvalidPulse(_)
        | Error::InvalidGrid(_)
        | Error::NotNormalized { .. }
        | Error::DomainViolation(_)
        | Error::UnreachableTarget(_)
        | Error::NonpositiveArea(_)
        | Error::ZeroArea => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn quad(tol: f64) -> Quadrature {
    Quadrature { abs_tol: tol }
}

#[pyclass(name = "PulseEnvelope", module = "stirap", frozen, from_py_object)]
#[derive(Clone)]
struct PyPulse(pulses::PulseEnvelope);

#[pymethods]
impl PyPulse {
    #[staticmethod]
    fn zero() -> Self {
        PyPulse(pulses::PulseEnvelope::zero())
    }

    #[staticmethod]
    fn ramped_sin(amplitude: Complex64, width: f64) -> PyResult<Self> {
        pulses::PulseEnvelope::ramped_sin(amplitude, width)
            .map(PyPulse)
            .map_err(to_py)
    }

    #[staticmethod]
    fn ramped_cos(amplitude: Complex64, width: f64) -> PyResult<Self> {
        pulses::PulseEnvelope::ramped_cos(amplitude, width)
            .map(PyPulse)
            .map_err(to_py)
    }

    #[staticmethod]
    fn sech(amplitude: Complex64, width: f64) -> PyResult<Self> {
        pulses::PulseEnvelope::sech(amplitude, width)
            .map(PyPulse)
            .map_err(to_py)
    }

    #[staticmethod]
    fn gaussian(amplitude: Complex64, width: f64) -> PyResult<Self> {
        pulses::PulseEnvelope::gaussian(amplitude, width)
            .map(PyPulse)
            .map_err(to_py)
    }

    #[staticmethod]
    fn sech_squared(amplitude: Complex64, width: f64) -> PyResult<Self> {
        pulses::PulseEnvelope::sech_squared(amplitude, width)
            .map(PyPulse)
            .map_err(to_py)
    }

    /// Samples `(t, value)` interpolated with a monotone cubic.
    #[staticmethod]
    fn tabulated(times: Vec<f64>, values: Vec<Complex64>) -> PyResult<Self> {
        if times.len() != values.len() {
            return Err(PyValueError::new_err("times and values differ in length"));
        }
        let samples: Vec<(f64, Complex64)> = times.into_iter().zip(values).collect();
        pulses::PulseEnvelope::tabulated(&samples)
            .map(PyPulse)
            .map_err(to_py)
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        pulses::PulseEnvelope::load_csv(&path)
            .map(PyPulse)
            .map_err(to_py)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_csv(&path, &[]).map_err(to_py)
    }

    #[getter]
    fn family(&self) -> String {
        self.0.family().to_string()
    }

    fn __call__(&self, t: f64) -> Complex64 {
        self.0.eval(t)
    }

    fn sample(&self, times: Vec<f64>) -> Vec<Complex64> {
        times.iter().map(|&t| self.0.eval(t)).collect()
    }

    #[pyo3(signature = (t0, t1, tol = 1e-10))]
    fn area(&self, t0: f64, t1: f64, tol: f64) -> PyResult<f64> {
        self.0.area(t0, t1, &quad(tol)).map_err(to_py)
    }

    fn scaled(&self, factor: f64) -> Self {
        PyPulse(self.0.scaled(factor))
    }

    fn __repr__(&self) -> String {
        format!(
            "PulseEnvelope({}, amplitude={}, width={})",
            self.0.family(),
            self.0.amplitude(),
            self.0.width()
        )
    }
}

#[pyclass(name = "PulseSet", module = "stirap", frozen, from_py_object)]
#[derive(Clone)]
struct PyPulseSet(pulses::PulseSet);

#[pymethods]
impl PyPulseSet {
    #[new]
    #[pyo3(signature = (pump, stokes, detuning = None))]
    fn new(pump: PyPulse, stokes: PyPulse, detuning: Option<PyPulse>) -> PyResult<Self> {
        let d = detuning
            .map(|d| d.0)
            .unwrap_or_else(pulses::PulseEnvelope::zero);
        pulses::PulseSet::new(pump.0, stokes.0, d)
            .map(PyPulseSet)
            .map_err(to_py)
    }

    #[getter]
    fn pump(&self) -> PyPulse {
        PyPulse(self.0.pump.clone())
    }

    #[getter]
    fn stokes(&self) -> PyPulse {
        PyPulse(self.0.stokes.clone())
    }

    #[getter]
    fn detuning(&self) -> PyPulse {
        PyPulse(self.0.detuning.clone())
    }
}

#[pyclass(name = "Trajectory", module = "stirap", frozen)]
struct PyTrajectory(dynamics::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times.clone()
    }

    /// Amplitudes as a list of `(c1, c2, c3)`.
    #[getter]
    fn states(&self) -> Vec<(Complex64, Complex64, Complex64)> {
        self.0.states.iter().map(|s| (s[0], s[1], s[2])).collect()
    }

    #[getter]
    fn norm_drift(&self) -> f64 {
        self.0.norm_drift
    }

    #[getter]
    fn basis_order(&self) -> usize {
        self.0.basis_order
    }

    /// Population of state `k` (1-based) on every node.
    fn population(&self, k: usize) -> PyResult<Vec<f64>> {
        if !(1..=3).contains(&k) {
            return Err(PyValueError::new_err("state index must be 1, 2 or 3"));
        }
        Ok(self.0.population(k - 1))
    }

    fn final_populations(&self) -> PyResult<(f64, f64, f64)> {
        let [a, b, c] = dynamics::final_populations(&self.0).map_err(to_py)?;
        Ok((a, b, c))
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_csv(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "AngleSeries", module = "stirap", frozen, from_py_object)]
#[derive(Clone)]
struct PyAngles(adiabatic::AngleSeries);

#[pymethods]
impl PyAngles {
    #[getter]
    fn order(&self) -> usize {
        self.0.order()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times().to_vec()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.0.theta().to_vec()
    }

    #[getter]
    fn omega(&self) -> Vec<f64> {
        self.0.omega().to_vec()
    }

    #[getter]
    fn theta_dot(&self) -> Vec<f64> {
        self.0.theta_dot().to_vec()
    }
}

fn state(c0: (Complex64, Complex64, Complex64)) -> PyResult<StateVector> {
    StateVector::new(c0.0, c0.1, c0.2).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pulses, c0, window, tol = 1e-10, grid_points = 2000))]
fn propagate(
    py: Python<'_>,
    pulses: &PyPulseSet,
    c0: (Complex64, Complex64, Complex64),
    window: (f64, f64),
    tol: f64,
    grid_points: usize,
) -> PyResult<PyTrajectory> {
    let c0 = state(c0)?;
    let opts = PropagationOptions::default()
        .with_tol(tol)
        .with_grid_points(grid_points);
    let set = pulses.0.clone();
    py.detach(|| dynamics::propagate(&set, &c0, window, &opts))
        .map(PyTrajectory)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (t0, t1, n = 2000))]
fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    dynamics::uniform_grid(t0, t1, n)
}

/// Angles of orders `0..=order` on `grid`.
#[pyfunction]
fn angle_hierarchy(pulses: &PyPulseSet, grid: Vec<f64>, order: usize) -> PyResult<Vec<PyAngles>> {
    adiabatic::angle_hierarchy(&pulses.0, &grid, order)
        .map(|v| v.into_iter().map(PyAngles).collect())
        .map_err(to_py)
}

/// Projects a bare trajectory onto the basis of `order`, built from
/// `angles[..order]`.
#[pyfunction]
fn project(traj: &PyTrajectory, angles: Vec<PyAngles>, order: usize) -> PyResult<PyTrajectory> {
    if angles.len() < order {
        return Err(PyValueError::new_err(format!(
            "order {order} needs {order} angle series, got {}",
            angles.len()
        )));
    }
    let series: Vec<_> = angles.into_iter().take(order).map(|a| a.0).collect();
    let xf = adiabatic::transform(order, &series).map_err(to_py)?;
    adiabatic::project(&traj.0, &xf)
        .map(PyTrajectory)
        .map_err(to_py)
}

#[pyclass(name = "Design", module = "stirap", frozen)]
struct PyDesign(matched::Design);

#[pymethods]
impl PyDesign {
    #[getter]
    fn pulses(&self) -> PyPulseSet {
        PyPulseSet(self.0.pulses.clone())
    }

    #[getter]
    fn angles(&self) -> Vec<PyAngles> {
        self.0.angles.iter().cloned().map(PyAngles).collect()
    }

    #[getter]
    fn order(&self) -> usize {
        self.0.metadata.order
    }

    #[getter]
    fn theta_const(&self) -> f64 {
        self.0.metadata.theta_const
    }

    #[getter]
    fn area(&self) -> f64 {
        self.0.metadata.area
    }

    #[getter]
    fn alpha(&self) -> Option<f64> {
        self.0.metadata.alpha
    }

    #[getter]
    fn predicted_loss(&self) -> Option<f64> {
        self.0.metadata.predicted_loss
    }

    /// The design sidecar as TOML text.
    fn metadata_toml(&self) -> PyResult<String> {
        self.0.metadata.to_toml().map_err(to_py)
    }

    fn save(&self, dir: PathBuf, stem: &str) -> PyResult<()> {
        self.0.save(&dir, stem).map_err(to_py)
    }
}

/// Matched pulses whose angle of order `order - 1` is the constant `theta`.
#[pyfunction]
#[pyo3(signature = (order, theta, base, grid, free_constants = None, tol = 1e-10))]
fn design(
    order: usize,
    theta: f64,
    base: &PyPulse,
    grid: Vec<f64>,
    free_constants: Option<Vec<f64>>,
    tol: f64,
) -> PyResult<PyDesign> {
    let mut spec = MatchedSpec::new(order, theta, base.0.clone());
    if let Some(c) = free_constants {
        spec = spec.with_free_constants(c);
    }
    matched::design(&spec, &grid, &quad(tol))
        .map(PyDesign)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (omega0, theta1, grid, tol = 1e-10))]
fn second_order_coherence_pulses(
    omega0: &PyPulse,
    theta1: f64,
    grid: Vec<f64>,
    tol: f64,
) -> PyResult<PyDesign> {
    matched::second_order_coherence_pulses(&omega0.0, theta1, &grid, &quad(tol))
        .map(PyDesign)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (area, grid, tol = 1e-10))]
fn second_order_transfer_pulses(area: f64, grid: Vec<f64>, tol: f64) -> PyResult<PyDesign> {
    matched::second_order_transfer_pulses(area, &grid, &quad(tol))
        .map(PyDesign)
        .map_err(to_py)
}

#[pyfunction]
fn second_order_transfer_populations(area: f64) -> PyResult<(f64, f64, f64)> {
    let [a, b, c] = matched::second_order_transfer_populations(area).map_err(to_py)?;
    Ok((a, b, c))
}

#[pyfunction]
fn complete_transfer_areas(n_max: usize) -> Vec<f64> {
    matched::complete_transfer_areas(n_max)
}

/// `target` is `"state3"` or `"state2"`.
#[pyfunction]
#[pyo3(signature = (omega0, target, grid, tol = 1e-10))]
fn third_order_design(
    omega0: &PyPulse,
    target: &str,
    grid: Vec<f64>,
    tol: f64,
) -> PyResult<PyDesign> {
    let target = match target {
        "state3" => ThirdOrderTarget::State3,
        "state2" => ThirdOrderTarget::State2,
        other => return Err(PyValueError::new_err(format!("unknown target `{other}`"))),
    };
    matched::third_order_design(&omega0.0, target, &grid, &quad(tol))
        .map(PyDesign)
        .map_err(to_py)
}

#[pyclass(name = "Report", module = "stirap", frozen)]
struct PyReport(scenarios::Report);

#[pymethods]
impl PyReport {
    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn final_populations(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.0.final_populations;
        (a, b, c)
    }

    #[getter]
    fn norm_drift(&self) -> f64 {
        self.0.norm_drift
    }

    #[getter]
    fn passed(&self) -> bool {
        self.0.passed()
    }

    /// `(quantity, order, value, passed)` per check.
    #[getter]
    fn checks(&self) -> Vec<(String, Option<usize>, f64, bool)> {
        self.0
            .checks
            .iter()
            .map(|c| (c.spec.quantity.clone(), c.spec.order, c.value, c.passed))
            .collect()
    }

    #[getter]
    fn extras(&self) -> Vec<(String, f64)> {
        self.0.extras.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    #[getter]
    fn bare(&self) -> PyTrajectory {
        PyTrajectory(self.0.bare.clone())
    }

    #[getter]
    fn dressed(&self) -> Vec<PyTrajectory> {
        self.0.dressed.iter().cloned().map(PyTrajectory).collect()
    }

    fn summary(&self) -> String {
        self.0.summary()
    }
}

#[pyfunction]
fn list_scenarios() -> Vec<(String, String)> {
    scenarios::builtins()
        .into_iter()
        .map(|c| (c.name, c.description))
        .collect()
}

#[pyfunction]
fn dump_scenario(name: &str) -> PyResult<String> {
    scenarios::builtin(name)
        .ok_or_else(|| PyValueError::new_err(format!("no built-in scenario `{name}`")))?
        .to_toml()
        .map_err(to_py)
}

/// Runs a built-in scenario or a TOML config file.
#[pyfunction]
#[pyo3(signature = (name_or_path, out_dir = None, tol = None, grid = None, orders = None))]
fn run_scenario(
    py: Python<'_>,
    name_or_path: &str,
    out_dir: Option<PathBuf>,
    tol: Option<f64>,
    grid: Option<usize>,
    orders: Option<Vec<usize>>,
) -> PyResult<PyReport> {
    let cfg = scenarios::resolve(name_or_path).map_err(to_py)?;
    let opts = RunOptions {
        out_dir,
        tol,
        grid_points: grid,
        orders,
    };
    py.detach(|| scenarios::run(&cfg, &opts))
        .map(PyReport)
        .map_err(to_py)
}

/// `(A/pi, p3_formula, p3_numeric)`.
type SweepRow = (f64, Option<f64>, Option<f64>);

/// Rows `(A/pi, p3_formula, p3_numeric)`; a failed row has `None` as its
/// numeric value.
#[pyfunction]
#[pyo3(signature = (areas_over_pi, designer, tol = 1e-10, grid = 2000))]
fn sweep(
    py: Python<'_>,
    areas_over_pi: Vec<f64>,
    designer: &str,
    tol: f64,
    grid: usize,
) -> PyResult<Vec<SweepRow>> {
    let designer: Designer = designer.parse().map_err(to_py)?;
    let opts = SweepOptions {
        tol,
        grid_points: grid,
        ..SweepOptions::default()
    };
    let areas: Vec<f64> = areas_over_pi
        .iter()
        .map(|a| a * std::f64::consts::PI)
        .collect();
    let rows = py.detach(|| scenarios::sweep(&areas, designer, &opts));
    Ok(rows
        .iter()
        .map(|r| {
            (
                r.area / std::f64::consts::PI,
                r.p3_formula(),
                r.p3_numeric(),
            )
        })
        .collect())
}

#[pymodule]
fn stirap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPulse>()?;
    m.add_class::<PyPulseSet>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyAngles>()?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_grid, m)?)?;
    m.add_function(wrap_pyfunction!(angle_hierarchy, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    m.add_function(wrap_pyfunction!(second_order_coherence_pulses, m)?)?;
    m.add_function(wrap_pyfunction!(second_order_transfer_pulses, m)?)?;
    m.add_function(wrap_pyfunction!(second_order_transfer_populations, m)?)?;
    m.add_function(wrap_pyfunction!(complete_transfer_areas, m)?)?;
    m.add_function(wrap_pyfunction!(third_order_design, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(dump_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
