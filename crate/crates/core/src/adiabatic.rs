//! Generalized adiabatic basis: dynamical angles, their iteration, the
//! transformation matrices `U_n`, `V_n` and dressed-frame projections.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::dynamics::{EvolutionMatrix, Trajectory};
use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::pulses::{fmt_f64, Family, PulseEnvelope, PulseSet};
use crate::quad::{self, Quadrature};

type C64 = Complex64;

/// Sampled mixing angle `theta_n`, coupling `Omega_n` and `d theta_n / dt`.
#[derive(Clone, Debug)]
pub struct AngleSeries {
    order: usize,
    times: Vec<f64>,
    theta: Vec<f64>,
    omega: Vec<f64>,
    theta_dot: Vec<f64>,
    degenerate: Vec<bool>,
    anchor: usize,
    theta_interp: MonotoneCubic,
    theta_dot_interp: MonotoneCubic,
}

impl AngleSeries {
    /// Builds a series from explicit samples. `omega` must be nonnegative.
    pub fn new(
        order: usize,
        times: Vec<f64>,
        theta: Vec<f64>,
        omega: Vec<f64>,
        theta_dot: Vec<f64>,
    ) -> Result<Self> {
        let n = times.len();
        if n < 2 {
            return Err(Error::InvalidGrid("angle series needs two samples".into()));
        }
        if theta.len() != n || omega.len() != n || theta_dot.len() != n {
            return Err(Error::GridMismatch(
                "angle series components differ in length".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("angle grid must increase".into()));
        }
        if omega.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::DomainViolation(
                "generalized Rabi frequency must be nonnegative".into(),
            ));
        }
        let degenerate = omega.iter().map(|&w| w == 0.0).collect();
        let anchor = argmax(&omega);
        Ok(Self::assemble(
            order, times, theta, omega, theta_dot, degenerate, anchor,
        ))
    }

    fn assemble(
        order: usize,
        times: Vec<f64>,
        theta: Vec<f64>,
        omega: Vec<f64>,
        theta_dot: Vec<f64>,
        degenerate: Vec<bool>,
        anchor: usize,
    ) -> Self {
        let theta_interp = MonotoneCubic::new(times.clone(), theta.clone());
        let theta_dot_interp = MonotoneCubic::new(times.clone(), theta_dot.clone());
        AngleSeries {
            order,
            times,
            theta,
            omega,
            theta_dot,
            degenerate,
            anchor,
            theta_interp,
            theta_dot_interp,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn theta_dot(&self) -> &[f64] {
        &self.theta_dot
    }

    /// Samples where `Omega_n` vanished and theta was filled by continuation.
    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    /// Sample whose angle is kept on the principal branch when unwrapping:
    /// the peak of `Omega_0`, inherited by every higher order.
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn covers(&self, t: f64) -> bool {
        t >= self.times[0] && t <= self.times[self.len() - 1]
    }

    /// Interpolated angle; `None` outside the grid.
    pub fn theta_at(&self, t: f64) -> Option<f64> {
        self.theta_interp.eval(t)
    }

    pub fn theta_dot_at(&self, t: f64) -> Option<f64> {
        self.theta_dot_interp.eval(t)
    }

    /// Largest deviation of theta from its value at the grid midpoint,
    /// restricted to samples where `Omega_n` exceeds `rel` times its peak.
    pub fn theta_spread(&self, rel: f64) -> f64 {
        let peak = self.omega.iter().fold(0.0f64, |m, &w| m.max(w));
        let active: Vec<f64> = self
            .theta
            .iter()
            .zip(&self.omega)
            .filter(|(_, &w)| w > rel * peak)
            .map(|(&th, _)| th)
            .collect();
        if active.is_empty() {
            return 0.0;
        }
        let lo = active.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = active.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "theta", "omega", "theta_dot"])?;
        for k in 0..self.len() {
            w.write_record([
                fmt_f64(self.times[k]),
                fmt_f64(self.theta[k]),
                fmt_f64(self.omega[k]),
                fmt_f64(self.theta_dot[k]),
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

/// Finite-difference weights for the first derivative at `z` from the
/// nodes `x` (Fornberg's recursion).
fn fd_weights(z: f64, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut c = vec![[0.0f64; 2]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[1]).collect()
}

/// Fourth-order derivative of samples `y` on the grid `x`: five-point
/// stencils, centred where possible and one-sided at the ends.
pub fn grid_derivative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let width = n.min(5);
    (0..n)
        .map(|k| {
            let start = k.saturating_sub(width / 2).min(n - width);
            let nodes = &x[start..start + width];
            fd_weights(x[k], nodes)
                .iter()
                .zip(&y[start..start + width])
                .map(|(w, v)| w * v)
                .sum()
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &x)| {
            if x > best.1 {
                (k, x)
            } else {
                best
            }
        })
        .0
}

/// Folds jumps between consecutive unflagged samples by multiples of pi,
/// then shifts the series so the anchor sample keeps its principal value.
fn unwrap_anchored(theta: &mut [f64], flags: &[bool], anchor: usize) {
    let principal = theta[anchor];
    unwrap_pi(theta, flags);
    if !flags[anchor] {
        let shift = principal - theta[anchor];
        theta.iter_mut().for_each(|v| *v += shift);
    }
}

/// Folds jumps between consecutive unflagged samples by multiples of pi.
fn unwrap_pi(theta: &mut [f64], flags: &[bool]) {
    let mut last: Option<f64> = None;
    for k in 0..theta.len() {
        if flags[k] {
            continue;
        }
        if let Some(prev) = last {
            theta[k] -= PI * ((theta[k] - prev) / PI).round();
        }
        last = Some(theta[k]);
    }
}

/// Replaces theta at flagged samples: linear interpolation between valid
/// neighbours, constant extension at the ends.
fn fill_degenerate(times: &[f64], theta: &mut [f64], flags: &[bool]) -> bool {
    let valid: Vec<usize> = (0..theta.len()).filter(|&k| !flags[k]).collect();
    if valid.is_empty() {
        return false;
    }
    for k in 0..theta.len() {
        if !flags[k] {
            continue;
        }
        let next = valid.partition_point(|&v| v < k);
        theta[k] = match (next.checked_sub(1).map(|i| valid[i]), valid.get(next)) {
            (Some(a), Some(&b)) => {
                let s = (times[k] - times[a]) / (times[b] - times[a]);
                theta[a] + s * (theta[b] - theta[a])
            }
            (Some(a), None) => theta[a],
            (None, Some(&b)) => theta[b],
            (None, None) => unreachable!(),
        };
    }
    true
}

/// Closed-form `d theta_0 / dt = (P' S - P S') / (P^2 + S^2)` when both
/// envelopes are parametric.
pub fn theta0_dot_closed_form(pulses: &PulseSet, t: f64) -> Option<f64> {
    let dp = pulses.pump.derivative(t)?.re;
    let ds = pulses.stokes.derivative(t)?.re;
    let p = pulses.pump.eval_real(t);
    let s = pulses.stokes.eval_real(t);
    let w2 = p * p + s * s;
    if w2 == 0.0 {
        return None;
    }
    Some((dp * s - p * ds) / w2)
}

fn has_closed_form(pulses: &PulseSet) -> bool {
    let parametric = |p: &PulseEnvelope| p.family() != Family::Tabulated;
    parametric(&pulses.pump) && parametric(&pulses.stokes)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidGrid("angle grid needs two samples".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("angle grid must increase".into()));
    }
    Ok(())
}

/// Mixing angle `tan theta_0 = P / S` and `Omega_0 = sqrt(P^2 + S^2)`.
pub fn angle0(pulses: &PulseSet, grid: &[f64]) -> Result<AngleSeries> {
    check_grid(grid)?;
    if !pulses.pump.is_real() || !pulses.stokes.is_real() {
        return Err(Error::ComplexPulse {
            t0: grid[0],
            t1: grid[grid.len() - 1],
        });
    }
    let p: Vec<f64> = grid.iter().map(|&t| pulses.pump.eval_real(t)).collect();
    let s: Vec<f64> = grid.iter().map(|&t| pulses.stokes.eval_real(t)).collect();
    let omega: Vec<f64> = p.iter().zip(&s).map(|(p, s)| p.hypot(*s)).collect();
    let flags: Vec<bool> = omega.iter().map(|&w| w == 0.0).collect();
    let mut theta: Vec<f64> = p.iter().zip(&s).map(|(p, s)| p.atan2(*s)).collect();
    let anchor = argmax(&omega);
    unwrap_anchored(&mut theta, &flags, anchor);
    if !fill_degenerate(grid, &mut theta, &flags) {
        return Err(Error::AllZeroPulses);
    }
    let fd = grid_derivative(grid, &theta);
    let theta_dot = if has_closed_form(pulses) {
        grid.iter()
            .zip(&fd)
            .map(|(&t, &d)| theta0_dot_closed_form(pulses, t).unwrap_or(d))
            .collect()
    } else {
        fd
    };
    Ok(AngleSeries::assemble(
        0,
        grid.to_vec(),
        theta,
        omega,
        theta_dot,
        flags,
        anchor,
    ))
}

/// Next level from an explicit effective coupling `c = 2 theta_dot` (or its
/// loop-shifted form): `theta = atan2(Omega, c)`, `Omega' = hypot(Omega, c)`.
fn iterate_with_coupling(prev: &AngleSeries, coupling: &[f64]) -> AngleSeries {
    let times = prev.times.clone();
    let omega: Vec<f64> = prev
        .omega
        .iter()
        .zip(coupling)
        .map(|(w, c)| w.hypot(*c))
        .collect();
    let flags: Vec<bool> = omega.iter().map(|&w| w == 0.0).collect();
    let mut theta: Vec<f64> = prev
        .omega
        .iter()
        .zip(coupling)
        .map(|(w, c)| w.atan2(*c))
        .collect();
    unwrap_anchored(&mut theta, &flags, prev.anchor);
    if !fill_degenerate(&times, &mut theta, &flags) {
        theta.iter_mut().for_each(|v| *v = PI / 2.0);
    }
    let theta_dot = grid_derivative(&times, &theta);
    if flags.iter().any(|&d| d) {
        log::warn!(
            "order {} angle is degenerate at {} samples",
            prev.order + 1,
            flags.iter().filter(|&&d| d).count()
        );
    }
    AngleSeries::assemble(
        prev.order + 1,
        times,
        theta,
        omega,
        theta_dot,
        flags,
        prev.anchor,
    )
}

/// `sin theta_n = Omega_{n-1} / Omega_n`, `cos theta_n = 2 theta_dot_{n-1} / Omega_n`.
pub fn iterate_angle(prev: &AngleSeries) -> Result<AngleSeries> {
    if prev.theta_dot.iter().any(|v| !v.is_finite()) {
        return Err(Error::DomainViolation(
            "angle derivative is not finite".into(),
        ));
    }
    let coupling: Vec<f64> = prev.theta_dot.iter().map(|d| 2.0 * d).collect();
    Ok(iterate_with_coupling(prev, &coupling))
}

/// First-order angle of the loop system with imaginary detuning
/// `D = i D~`, whose dressed coupling is `2 theta_dot_0 - D~`.
pub fn iterate_angle_loop(angles0: &AngleSeries, pulses: &PulseSet) -> Result<AngleSeries> {
    if angles0.order != 0 {
        return Err(Error::DomainViolation(
            "loop iteration starts from the order-0 angle".into(),
        ));
    }
    let mut coupling = Vec::with_capacity(angles0.len());
    for (&t, &d) in angles0.times.iter().zip(&angles0.theta_dot) {
        let det = pulses.detuning.eval(t);
        if det.re.abs() > 1e-12 * det.im.abs().max(1.0) {
            return Err(Error::DetuningNotImaginary { t });
        }
        coupling.push(2.0 * d - det.im);
    }
    Ok(iterate_with_coupling(angles0, &coupling))
}

/// Angles of orders `0..=order`, with the loop-shifted first level when the
/// set carries a detuning.
pub fn angle_hierarchy(pulses: &PulseSet, grid: &[f64], order: usize) -> Result<Vec<AngleSeries>> {
    let mut out = vec![angle0(pulses, grid)?];
    for n in 1..=order {
        let next = if n == 1 && pulses.has_detuning() {
            iterate_angle_loop(&out[0], pulses)?
        } else {
            iterate_angle(&out[n - 1])?
        };
        out.push(next);
    }
    Ok(out)
}

/// `U(theta) = [[0,1,0],[sin,0,cos],[i cos,0,-i sin]]`.
pub fn u_matrix(theta: f64) -> Matrix3<C64> {
    let (s, c) = theta.sin_cos();
    let z = C64::new(0.0, 0.0);
    Matrix3::new(
        z,
        C64::new(1.0, 0.0),
        z,
        C64::new(s, 0.0),
        z,
        C64::new(c, 0.0),
        C64::new(0.0, c),
        z,
        C64::new(0.0, -s),
    )
}

fn u_matrix_dtheta(theta: f64) -> Matrix3<C64> {
    let (s, c) = theta.sin_cos();
    let z = C64::new(0.0, 0.0);
    Matrix3::new(
        z,
        z,
        z,
        C64::new(c, 0.0),
        z,
        C64::new(-s, 0.0),
        C64::new(0.0, -s),
        z,
        C64::new(0.0, -c),
    )
}

/// Largest entry of `M M^dagger - I`.
pub fn unitarity_error(m: &Matrix3<C64>) -> f64 {
    let d = m * m.adjoint() - Matrix3::identity();
    d.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Per-sample `U_k` for every level below `order` and `V_n = U_{n-1} ... U_0`.
#[derive(Clone, Debug)]
pub struct BasisTransform {
    pub order: usize,
    pub times: Vec<f64>,
    pub levels: Vec<Vec<Matrix3<C64>>>,
    pub v: Vec<Matrix3<C64>>,
}

impl BasisTransform {
    pub fn max_unitarity_error(&self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .chain(&self.v)
            .map(unitarity_error)
            .fold(0.0, f64::max)
    }
}

/// Builds `V_n` from `angles[0..n]`, which must share one grid.
pub fn transform(order: usize, angles: &[AngleSeries]) -> Result<BasisTransform> {
    if angles.len() < order.max(1) {
        return Err(Error::GridMismatch(format!(
            "order {order} needs {order} angle series, got {}",
            angles.len()
        )));
    }
    let times = angles[0].times.clone();
    for a in &angles[..order] {
        if a.times != times {
            return Err(Error::GridMismatch("angle series grids differ".into()));
        }
    }
    let levels: Vec<Vec<Matrix3<C64>>> = angles[..order]
        .iter()
        .map(|a| a.theta.iter().map(|&th| u_matrix(th)).collect())
        .collect();
    let v = (0..times.len())
        .map(|k| {
            levels
                .iter()
                .fold(Matrix3::identity(), |acc, lvl| lvl[k] * acc)
        })
        .collect();
    Ok(BasisTransform {
        order,
        times,
        levels,
        v,
    })
}

/// Dressed amplitudes `B^(n)(t) = V_n(t) C(t)`.
pub fn project(traj: &Trajectory, xf: &BasisTransform) -> Result<Trajectory> {
    if traj.times.len() != xf.times.len()
        || traj
            .times
            .iter()
            .zip(&xf.times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::GridMismatch(
            "trajectory and basis transform grids differ".into(),
        ));
    }
    let states = traj.states.iter().zip(&xf.v).map(|(c, v)| v * c).collect();
    let mut out = Trajectory::new(traj.times.clone(), states, xf.order)?;
    out.norm_drift = out.norm_drift.max(traj.norm_drift);
    Ok(out)
}

/// First-order dressed matrix `U W U^dagger + i dU/dt U^dagger` for any
/// complex detuning. `theta_0` is evaluated from the envelopes on the branch
/// of `angles0`; its rate is interpolated from `angles0`.
pub fn dressed_w_loop(pulses: &PulseSet, angles0: &AngleSeries, t: f64) -> Result<EvolutionMatrix> {
    let (theta, theta_dot) = match (angles0.theta_at(t), angles0.theta_dot_at(t)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::DomainViolation(format!(
                "t = {t} outside the angle grid"
            )))
        }
    };
    // exact angle from the envelopes, on the branch of the series
    let p = pulses.pump.eval_real(t);
    let s = pulses.stokes.eval_real(t);
    let theta = if p == 0.0 && s == 0.0 {
        theta
    } else {
        let exact = p.atan2(s);
        exact + PI * ((theta - exact) / PI).round()
    };
    let w = crate::dynamics::build_w(pulses, t).0;
    let u = u_matrix(theta);
    let du = u_matrix_dtheta(theta) * C64::new(theta_dot, 0.0);
    let m = u * w * u.adjoint() + du * u.adjoint() * C64::new(0.0, 1.0);
    Ok(EvolutionMatrix(m))
}

/// Purely imaginary detuning `i 2 theta_dot_0(t)` tabulated on the angle
/// grid, which removes the coupling of the dark state.
pub fn design_locking_detuning(angles0: &AngleSeries) -> Result<PulseEnvelope> {
    if angles0.theta_dot.iter().all(|&d| d == 0.0) {
        return Ok(PulseEnvelope::zero());
    }
    let samples: Vec<(f64, C64)> = angles0
        .times
        .iter()
        .zip(&angles0.theta_dot)
        .map(|(&t, &d)| (t, C64::new(0.0, 2.0 * d)))
        .collect();
    PulseEnvelope::tabulated(&samples)
}

/// Whole-line area of the locking detuning, `2 [theta_0(+inf) - theta_0(-inf)]`,
/// from the closed-form angle rate.
pub fn locking_area(pulses: &PulseSet, quad: &Quadrature) -> Result<f64> {
    if !has_closed_form(pulses) {
        return Err(Error::DomainViolation(
            "whole-line locking area needs parametric pump and Stokes".into(),
        ));
    }
    quad::integrate_real_line(
        |t| 2.0 * theta0_dot_closed_form(pulses, t).unwrap_or(0.0),
        quad.abs_tol,
    )
}

/// Sinh-spaced grid `t = scale sinh(u)` from `t0` to `t1`, dense near the
/// origin and sparse in the tails.
pub fn sinh_grid(t0: f64, t1: f64, scale: f64, n: usize) -> Result<Vec<f64>> {
    if !(t1 > t0 && scale > 0.0 && n >= 2) {
        return Err(Error::InvalidGrid(format!(
            "bad sinh grid [{t0}, {t1}] scale {scale} n {n}"
        )));
    }
    let (u0, u1) = ((t0 / scale).asinh(), (t1 / scale).asinh());
    let mut g: Vec<f64> = (0..n)
        .map(|k| scale * (u0 + (u1 - u0) * k as f64 / (n - 1) as f64).sinh())
        .collect();
    g[0] = t0;
    g[n - 1] = t1;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::uniform_grid;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn fig2(detuning: bool) -> PulseSet {
        let set = PulseSet::without_detuning(
            PulseEnvelope::ramped_sin(20.0, 0.1).unwrap(),
            PulseEnvelope::ramped_cos(20.0, 0.1).unwrap(),
        )
        .unwrap();
        if detuning {
            set.with_detuning(PulseEnvelope::sech(C64::new(0.0, -13.4), 0.2).unwrap())
        } else {
            set
        }
    }

    #[test]
    fn fd_weights_are_exact_for_quartics() {
        let x = [0.0, 0.3, 0.7, 1.2, 1.3];
        let y: Vec<f64> = x.iter().map(|v| v * v * v * v - 2.0 * v).collect();
        let d = grid_derivative(&x, &y);
        for (xi, di) in x.iter().zip(&d) {
            assert!((di - (4.0 * xi * xi * xi - 2.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn stokes_only_gives_zero_angle() {
        let set = PulseSet::without_detuning(
            PulseEnvelope::zero(),
            PulseEnvelope::gaussian(2.0, 1.0).unwrap(),
        )
        .unwrap();
        let a = angle0(&set, &uniform_grid(-3.0, 3.0, 101)).unwrap();
        assert!(a.theta().iter().all(|&th| th == 0.0));
    }

    #[test]
    fn equal_pulses_give_quarter_pi() {
        let g = PulseEnvelope::gaussian(2.0, 1.0).unwrap();
        let set = PulseSet::without_detuning(g.clone(), g).unwrap();
        let a = angle0(&set, &uniform_grid(-3.0, 3.0, 101)).unwrap();
        assert!(a.theta().iter().all(|&th| (th - FRAC_PI_4).abs() < 1e-15));
        assert!(a.theta_dot().iter().all(|&d| d.abs() < 1e-15));
    }

    #[test]
    fn all_zero_pulses_fail() {
        let set = PulseSet::without_detuning(PulseEnvelope::zero(), PulseEnvelope::zero()).unwrap();
        assert!(matches!(
            angle0(&set, &uniform_grid(0.0, 1.0, 10)),
            Err(Error::AllZeroPulses)
        ));
    }

    #[test]
    fn ramp_angle_limits() {
        let a = angle0(&fig2(false), &uniform_grid(-1e4, 1e4, 2001)).unwrap();
        assert!(a.theta()[0].abs() < 1e-5);
        assert!((a.theta()[2000] - PI / 2.0).abs() < 1e-5);
    }

    #[test]
    fn closed_form_rate_matches_finite_differences() {
        let set = fig2(false);
        let grid = uniform_grid(-1.0, 1.0, 4001);
        let a = angle0(&set, &grid).unwrap();
        let fd = grid_derivative(&grid, a.theta());
        for k in 0..grid.len() {
            assert!((fd[k] - a.theta_dot()[k]).abs() < 1e-6, "t = {}", grid[k]);
        }
        // exact Lorentzian for the ramp family
        let t: f64 = 0.05;
        let x = t / 0.1;
        let expected = 0.5 / 0.1 / (1.0 + x * x);
        assert!((theta0_dot_closed_form(&set, t).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn first_order_rabi_matches_pythagoras() {
        let set = fig2(false);
        let grid = uniform_grid(-4.0, 4.0, 2001);
        let a0 = angle0(&set, &grid).unwrap();
        let a1 = iterate_angle(&a0).unwrap();
        // oracle: rate from differences at half the grid step
        let h = 0.5 * (grid[1] - grid[0]);
        for (k, &t) in grid.iter().enumerate().skip(2).take(grid.len() - 4) {
            let th = |t: f64| set.pump.eval_real(t).atan2(set.stokes.eval_real(t));
            let d = (-th(t + 2.0 * h) + 8.0 * th(t + h) - 8.0 * th(t - h) + th(t - 2.0 * h))
                / (12.0 * h);
            let expected = (a0.omega()[k].powi(2) + 4.0 * d * d).sqrt();
            assert!((a1.omega()[k] - expected).abs() < 1e-6 * expected);
        }
    }

    #[test]
    fn constant_angle_iterates_to_half_pi() {
        let g = PulseEnvelope::sech(3.0, 1.0).unwrap();
        let set = PulseSet::without_detuning(g.scaled(0.5), g).unwrap();
        let grid = uniform_grid(-5.0, 5.0, 201);
        let a0 = angle0(&set, &grid).unwrap();
        let a1 = iterate_angle(&a0).unwrap();
        for k in 0..grid.len() {
            assert!((a1.theta()[k] - PI / 2.0).abs() < 1e-14);
            assert!((a1.omega()[k] - a0.omega()[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn u0_at_zero_angle() {
        let u = u_matrix(0.0);
        let one = C64::new(1.0, 0.0);
        assert_eq!(u[(0, 1)], one);
        assert_eq!(u[(1, 2)], one);
        assert_eq!(u[(2, 0)], C64::new(0.0, 1.0));
        assert_eq!(u.iter().filter(|z| z.norm() == 0.0).count(), 6);
    }

    #[test]
    fn v1_is_u0() {
        let set = fig2(false);
        let grid = uniform_grid(-4.0, 4.0, 101);
        let angles = angle_hierarchy(&set, &grid, 1).unwrap();
        let xf = transform(1, &angles).unwrap();
        for k in 0..grid.len() {
            assert_eq!(xf.v[k], xf.levels[0][k]);
        }
        assert!(xf.max_unitarity_error() < 1e-12);
    }

    #[test]
    fn second_order_initial_dressed_state() {
        let set = fig2(false);
        let grid = uniform_grid(-1e5, 1e5, 20001);
        let angles = angle_hierarchy(&set, &grid, 2).unwrap();
        let xf = transform(2, &angles).unwrap();
        let c = crate::dynamics::StateVector::basis(0);
        let b = xf.v[0] * c.as_vector();
        let th1 = angles[1].theta()[0];
        assert!(b[0].norm() < 1e-4);
        assert!((b[1] - C64::new(0.0, th1.cos())).norm() < 1e-4);
        assert!((b[2] - C64::new(th1.sin(), 0.0)).norm() < 1e-4);
    }

    #[test]
    fn dressed_matrix_at_origin() {
        let set = fig2(true);
        let grid = uniform_grid(-4.0, 4.0, 2001);
        let a0 = angle0(&set, &grid).unwrap();
        let w = dressed_w_loop(&set, &a0, 0.0).unwrap();
        let theta_dot = 0.5 / 0.1;
        let expected = theta_dot - 0.5 * (-13.4);
        assert!((w.entry(1, 2) - C64::new(expected, 0.0)).norm() < 1e-12);
        assert!((w.entry(0, 1) - C64::new(10.0, 0.0)).norm() < 1e-12);
        assert!(w.entry(0, 2).norm() < 1e-12);
        for k in 0..3 {
            assert!(w.entry(k, k).norm() < 1e-12);
        }
    }

    #[test]
    fn locking_detuning_decouples_dark_state() {
        let set = fig2(false);
        let grid = uniform_grid(-4.0, 4.0, 801);
        let a0 = angle0(&set, &grid).unwrap();
        let locked = set.with_detuning(design_locking_detuning(&a0).unwrap());
        for &t in &[-3.3, -0.01, 0.0, 0.123, 2.5] {
            let w = dressed_w_loop(&locked, &a0, t).unwrap();
            assert!(w.entry(1, 2).norm() < 1e-12, "t = {t}");
            assert!(w.entry(2, 1).norm() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn locking_area_is_pi() {
        let v = locking_area(&fig2(false), &Quadrature::new(1e-12)).unwrap();
        assert!((v - PI).abs() < 1e-10);
    }

    #[test]
    fn constant_angle_gives_zero_locking_detuning() {
        let g = PulseEnvelope::gaussian(1.0, 1.0).unwrap();
        let set = PulseSet::without_detuning(g.clone(), g).unwrap();
        let a0 = angle0(&set, &uniform_grid(-3.0, 3.0, 31)).unwrap();
        assert!(design_locking_detuning(&a0).unwrap().is_zero());
    }

    #[test]
    fn unwrap_folds_sign_flip() {
        // both envelopes cross zero together: atan2 jumps by pi
        let grid = uniform_grid(-1.0, 1.0, 201);
        let p: Vec<f64> = grid.iter().map(|t| t * 0.5).collect();
        let s: Vec<f64> = grid.iter().map(|t| t * 1.0).collect();
        let set = PulseSet::without_detuning(
            PulseEnvelope::tabulated_real(&grid, &p).unwrap(),
            PulseEnvelope::tabulated_real(&grid, &s).unwrap(),
        )
        .unwrap();
        let a = angle0(&set, &grid).unwrap();
        assert!(a.is_degenerate());
        assert!(a.theta_spread(0.0) < 1e-12);
    }

    proptest! {
        #[test]
        fn dressed_matrix_real_symmetric_for_imaginary_detuning(
            ad in -30.0f64..30.0, td in 0.05f64..1.0, t in -3.0f64..3.0
        ) {
            let set = fig2(false).with_detuning(PulseEnvelope::sech(C64::new(0.0, ad), td).unwrap());
            let a0 = angle0(&set, &uniform_grid(-4.0, 4.0, 401)).unwrap();
            let w = dressed_w_loop(&set, &a0, t).unwrap();
            for i in 0..3 {
                prop_assert!(w.entry(i, i).norm() < 1e-12);
                for j in 0..3 {
                    prop_assert!(w.entry(i, j).im.abs() < 1e-12);
                    prop_assert!((w.entry(i, j) - w.entry(j, i)).norm() < 1e-12);
                }
            }
            prop_assert!(w.entry(0, 2).norm() < 1e-12);
        }

        #[test]
        fn generalized_rabi_grows_with_order(a in 1.0f64..30.0, tp in 0.05f64..1.0, shift in -1.0f64..1.0) {
            let set = PulseSet::without_detuning(
                PulseEnvelope::gaussian(a, tp).unwrap(),
                PulseEnvelope::gaussian(a, tp).unwrap(),
            ).unwrap();
            let set = PulseSet::without_detuning(
                set.pump.clone(),
                PulseEnvelope::gaussian(a, tp).unwrap().tabulate(&uniform_grid(-5.0 + shift, 5.0 + shift, 301)).unwrap(),
            ).unwrap();
            let angles = angle_hierarchy(&set, &uniform_grid(-4.0, 4.0, 401), 3).unwrap();
            for n in 1..4 {
                for k in 0..401 {
                    prop_assert!(angles[n].omega()[k] >= angles[n - 1].omega()[k]);
                }
            }
        }

        #[test]
        fn transforms_are_unitary(thetas in prop::collection::vec(-4.0f64..4.0, 1..5)) {
            let v = thetas.iter().fold(Matrix3::identity(), |acc, &th| u_matrix(th) * acc);
            prop_assert!(unitarity_error(&v) < 1e-12);
            for &th in &thetas {
                prop_assert!(unitarity_error(&u_matrix(th)) < 1e-12);
            }
        }
    }
}
