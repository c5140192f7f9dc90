//! The loop evolution matrix and propagation of the bare-state amplitudes.

use std::io::Write;
use std::path::Path;

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ode::{self, State, StepControl};
use crate::pulses::{fmt_f64, PulseSet};

const NORM_TOL: f64 = 1e-10;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_GRID_POINTS: usize = 2000;

/// Three probability amplitudes of unit norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector(State);

impl StateVector {
    pub fn new(c1: Complex64, c2: Complex64, c3: Complex64) -> Result<Self> {
        Self::from_vector(State::new(c1, c2, c3))
    }

    pub fn from_vector(v: State) -> Result<Self> {
        let norm = v.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(StateVector(v))
    }

    /// Rescales any nonzero vector to unit norm.
    pub fn normalized(v: State) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NotNormalized { norm });
        }
        Ok(StateVector(v / Complex64::from(norm)))
    }

    /// Bare basis state `k` (0-based).
    pub fn basis(k: usize) -> Self {
        let mut v = State::zeros();
        v[k] = Complex64::new(1.0, 0.0);
        StateVector(v)
    }

    pub fn as_vector(&self) -> &State {
        &self.0
    }

    pub fn into_vector(self) -> State {
        self.0
    }

    pub fn populations(&self) -> [f64; 3] {
        populations(&self.0)
    }
}

pub(crate) fn populations(v: &State) -> [f64; 3] {
    [v[0].norm_sqr(), v[1].norm_sqr(), v[2].norm_sqr()]
}

/// Hermitian, zero-diagonal generator `W(t)` of `dC/dt = -i W C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolutionMatrix(pub Matrix3<Complex64>);

impl EvolutionMatrix {
    pub fn matrix(&self) -> &Matrix3<Complex64> {
        &self.0
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    /// Largest entry of `W - W^dagger`.
    pub fn hermiticity_error(&self) -> f64 {
        (self.0 - self.0.adjoint())
            .iter()
            .fold(0.0, |m, c| m.max(c.norm()))
    }
}

/// `W = 1/2 [[0, P, D], [P, 0, S], [D*, S, 0]]`.
pub fn build_w(pulses: &PulseSet, t: f64) -> EvolutionMatrix {
    let p = pulses.pump.eval(t) * 0.5;
    let s = pulses.stokes.eval(t) * 0.5;
    let d = pulses.detuning.eval(t) * 0.5;
    let z = Complex64::new(0.0, 0.0);
    EvolutionMatrix(Matrix3::new(z, p, d, p.conj(), z, s, d.conj(), s.conj(), z))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationOptions {
    pub tol: f64,
    pub grid_points: usize,
    /// Allowed norm drift in units of `tol`.
    pub drift_factor: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions {
            tol: DEFAULT_TOL,
            grid_points: DEFAULT_GRID_POINTS,
            drift_factor: 100.0,
        }
    }
}

impl PropagationOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_grid_points(mut self, n: usize) -> Self {
        self.grid_points = n;
        self
    }
}

/// Amplitudes sampled on a time grid, in the bare basis (`basis_order` 0)
/// or in a generalized adiabatic basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub norm_drift: f64,
    pub basis_order: usize,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<State>, basis_order: usize) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::GridMismatch(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("trajectory times must increase".into()));
        }
        let norm_drift = states
            .iter()
            .fold(0.0, |m: f64, s| m.max((s.norm() - 1.0).abs()));
        Ok(Trajectory {
            times,
            states,
            norm_drift,
            basis_order,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Population of component `k` (0-based) along the grid.
    pub fn population(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[k].norm_sqr()).collect()
    }

    pub fn min_population(&self, k: usize) -> f64 {
        self.population(k).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn max_population(&self, k: usize) -> f64 {
        self.population(k)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes `t,re_c1,im_c1,re_c2,im_c2,re_c3,im_c3,p1,p2,p3`. Dressed
    /// trajectories get a leading `# basis_order=n` line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        if self.basis_order > 0 {
            writeln!(out, "# basis_order={}", self.basis_order)
                .map_err(|e| Error::io("<csv>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t", "re_c1", "im_c1", "re_c2", "im_c2", "re_c3", "im_c3", "p1", "p2", "p3",
        ])?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let p = populations(s);
            w.write_record(&[
                fmt_f64(*t),
                fmt_f64(s[0].re),
                fmt_f64(s[0].im),
                fmt_f64(s[1].re),
                fmt_f64(s[1].im),
                fmt_f64(s[2].re),
                fmt_f64(s[2].im),
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(p[2]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// `n` evenly spaced points from `t0` to `t1` inclusive.
pub fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t0],
        _ => {
            let h = (t1 - t0) / (n - 1) as f64;
            let mut g: Vec<f64> = (0..n).map(|k| t0 + h * k as f64).collect();
            g[n - 1] = t1;
            g
        }
    }
}

/// Propagates `dC/dt = -i W(t) C` over `window`, sampling on a uniform
/// grid of `options.grid_points` points.
pub fn propagate(
    pulses: &PulseSet,
    c0: &StateVector,
    window: (f64, f64),
    options: &PropagationOptions,
) -> Result<Trajectory> {
    let (t0, t1) = window;
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(Error::InvalidGrid(format!("window [{t0}, {t1}] is empty")));
    }
    if options.grid_points < 2 {
        return Err(Error::InvalidGrid("need at least two grid points".into()));
    }
    let grid = uniform_grid(t0, t1, options.grid_points);
    propagate_on_grid(pulses, c0, &grid, options)
}

/// Propagation sampled on an arbitrary increasing grid.
pub fn propagate_on_grid(
    pulses: &PulseSet,
    c0: &StateVector,
    grid: &[f64],
    options: &PropagationOptions,
) -> Result<Trajectory> {
    propagate_generator(|t| build_w(pulses, t), c0, grid, options)
}

/// Propagation under any generator `W(t)`.
pub fn propagate_generator<F>(
    w: F,
    c0: &StateVector,
    grid: &[f64],
    options: &PropagationOptions,
) -> Result<Trajectory>
where
    F: Fn(f64) -> EvolutionMatrix,
{
    if !(options.tol > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "tolerance must be positive, got {}",
            options.tol
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("propagation grid must increase".into()));
    }
    let minus_i = Complex64::new(0.0, -1.0);
    let rhs = |t: f64, c: &State| (w(t).0 * c) * minus_i;
    let (states, stats) =
        ode::integrate(rhs, *c0.as_vector(), grid, StepControl::new(options.tol))?;
    log::debug!(
        "propagated {} samples: {} steps accepted, {} rejected",
        grid.len(),
        stats.accepted,
        stats.rejected
    );
    let traj = Trajectory::new(grid.to_vec(), states, 0)?;
    let limit = options.drift_factor * options.tol;
    if traj.norm_drift > limit {
        return Err(Error::NormDriftExceeded {
            drift: traj.norm_drift,
            limit,
        });
    }
    Ok(traj)
}

/// State at `t_end` after starting from `c0` at `t_start` (either order).
pub fn propagate_between(
    pulses: &PulseSet,
    c0: &State,
    t_start: f64,
    t_end: f64,
    tol: f64,
) -> Result<State> {
    let minus_i = Complex64::new(0.0, -1.0);
    let rhs = |t: f64, c: &State| (build_w(pulses, t).0 * c) * minus_i;
    let (states, _) = ode::integrate(rhs, *c0, &[t_start, t_end], StepControl::new(tol))?;
    Ok(states[states.len() - 1])
}

/// Populations at the last grid point.
pub fn final_populations(traj: &Trajectory) -> Result<[f64; 3]> {
    traj.states
        .last()
        .map(populations)
        .ok_or(Error::EmptyTrajectory)
}
