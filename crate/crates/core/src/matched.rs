//! Generalized matched pulses, the exact trapping-state solution and the
//! closed-form transfer formulas.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::adiabatic::AngleSeries;
use crate::dynamics::StateVector;
use crate::error::{Error, Result};
use crate::ode::{self, State, StepControl};
use crate::pulses::{PulseEnvelope, PulseSet};
use crate::quad::Quadrature;

type C64 = Complex64;

const ANGLE_ODE_TOL: f64 = 1e-13;
const MAX_ORDER: usize = 4;

/// Input of the general designer. `theta_n` is the constant value of the
/// highest angle `theta_{order-1}` and `base_envelope` is its coupling
/// `Omega_{order-1}`. `free_constants[k]` is the value of `theta_k` at the
/// start of the grid, for `k < order - 1`.
#[derive(Clone, Debug)]
pub struct MatchedSpec {
    pub order: usize,
    pub theta_n: f64,
    pub free_constants: Vec<f64>,
    pub base_envelope: PulseEnvelope,
}

impl MatchedSpec {
    /// Spec with all free constants zero.
    pub fn new(order: usize, theta_n: f64, base_envelope: PulseEnvelope) -> Self {
        MatchedSpec {
            order,
            theta_n,
            free_constants: vec![0.0; order.saturating_sub(1)],
            base_envelope,
        }
    }

    pub fn with_free_constants(mut self, constants: Vec<f64>) -> Self {
        self.free_constants = constants;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order > MAX_ORDER {
            return Err(Error::DomainViolation(format!(
                "matched order must be in 1..={MAX_ORDER}, got {}",
                self.order
            )));
        }
        if !(self.theta_n > 0.0 && self.theta_n < PI) {
            return Err(Error::DomainViolation(format!(
                "constant angle must lie in (0, pi), got {}",
                self.theta_n
            )));
        }
        if self.free_constants.len() != self.order - 1 {
            return Err(Error::DomainViolation(format!(
                "order {} needs {} free constants, got {}",
                self.order,
                self.order - 1,
                self.free_constants.len()
            )));
        }
        if !self.base_envelope.is_real() {
            return Err(Error::InvalidPulse("base envelope must be real".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThirdOrderTarget {
    State3,
    State2,
}

/// Sidecar record of how a pulse pair was designed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignMetadata {
    pub kind: String,
    pub order: usize,
    pub theta_const: f64,
    pub free_constants: Vec<f64>,
    pub area: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<ThirdOrderTarget>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescale_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_theta1: Option<f64>,
}

impl DesignMetadata {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

/// Designed pulses with the exact angle hierarchy used to build them.
#[derive(Clone, Debug)]
pub struct Design {
    pub pulses: PulseSet,
    /// Angles of orders `0..order`, the last one constant.
    pub angles: Vec<AngleSeries>,
    pub metadata: DesignMetadata,
}

impl Design {
    /// Writes `<stem>_pump.csv`, `<stem>_stokes.csv` and `<stem>_design.toml`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let header = vec![
            format!(
                "{} design, order {}",
                self.metadata.kind, self.metadata.order
            ),
            "signed real envelope; a sign change is a pi phase flip".to_string(),
        ];
        self.pulses
            .pump
            .save_csv(&dir.join(format!("{stem}_pump.csv")), &header)?;
        self.pulses
            .stokes
            .save_csv(&dir.join(format!("{stem}_stokes.csv")), &header)?;
        self.metadata.save(&dir.join(format!("{stem}_design.toml")))
    }

    /// Coupling of the two-level problem left after the transformation.
    pub fn top_coupling(&self) -> &AngleSeries {
        self.angles.last().expect("design has at least one angle")
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2
        || grid.windows(2).any(|w| w[1] <= w[0])
        || grid.iter().any(|t| !t.is_finite())
    {
        return Err(Error::InvalidGrid("design grid must increase".into()));
    }
    Ok(())
}

/// Running area of `pulse` from `grid[0]` to every node.
pub fn cumulative_area(pulse: &PulseEnvelope, grid: &[f64], quad: &Quadrature) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in grid.windows(2) {
        acc += pulse.area(w[0], w[1], quad)?;
        out.push(acc);
    }
    Ok(out)
}

/// Angles `theta_0 .. theta_{m-1}` as functions of the running base area,
/// from `d theta_{k-1} / dA = (1/2) (Omega_k / Omega_{m}) cos theta_k`.
fn angles_along_area(theta_top: f64, constants: &[f64], areas: &[f64]) -> Result<Vec<Vec<f64>>> {
    let m = constants.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    if m == 1 {
        let rate = 0.5 * theta_top.cos();
        return Ok(vec![areas
            .iter()
            .map(|a| constants[0] + rate * a)
            .collect()]);
    }
    // ratio Omega_k / Omega_top = prod_{j > k} sin theta_j
    let rhs = |_a: f64, y: &State| {
        let th = |k: usize| if k == m { theta_top } else { y[k].re };
        let mut out = State::zeros();
        for k in 1..=m {
            let ratio: f64 = (k + 1..=m).map(|j| th(j).sin()).product();
            out[k - 1] = C64::new(0.5 * ratio * th(k).cos(), 0.0);
        }
        out
    };
    let mut y0 = State::zeros();
    for (k, c) in constants.iter().enumerate() {
        y0[k] = C64::new(*c, 0.0);
    }
    // the integrator needs strictly increasing abscissae
    let mut unique: Vec<f64> = Vec::with_capacity(areas.len());
    let mut index = Vec::with_capacity(areas.len());
    for &a in areas {
        if unique.last().is_none_or(|&l| a > l) {
            unique.push(a);
        } else if a < *unique.last().unwrap() {
            return Err(Error::DomainViolation(
                "base envelope must be nonnegative".into(),
            ));
        }
        index.push(unique.len() - 1);
    }
    let states = if unique.len() == 1 {
        vec![y0]
    } else {
        ode::integrate(rhs, y0, &unique, StepControl::new(ANGLE_ODE_TOL))?.0
    };
    Ok((0..m)
        .map(|k| index.iter().map(|&i| states[i][k].re).collect())
        .collect())
}

/// Generalized matched pulses: `theta_{k-1} = (1/2) int Omega_k cos theta_k + c_{k-1}`,
/// `Omega_{k-1} = Omega_k sin theta_k`, then `P = Omega_0 sin theta_0`,
/// `S = Omega_0 cos theta_0`.
pub fn design(spec: &MatchedSpec, grid: &[f64], quad: &Quadrature) -> Result<Design> {
    spec.validate()?;
    check_grid(grid)?;
    let n = spec.order;
    let base: Vec<f64> = grid
        .iter()
        .map(|&t| spec.base_envelope.eval_real(t))
        .collect();
    let peak = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if base.iter().any(|&v| v < -1e-12 * peak) {
        return Err(Error::DomainViolation(
            "base envelope must be nonnegative".into(),
        ));
    }
    let areas = cumulative_area(&spec.base_envelope, grid, quad)?;
    let lower = angles_along_area(spec.theta_n, &spec.free_constants, &areas)?;

    // theta[k] for k < n, the last constant
    let mut theta: Vec<Vec<f64>> = lower;
    theta.push(vec![spec.theta_n; grid.len()]);
    let mut omega: Vec<Vec<f64>> = vec![Vec::new(); n];
    omega[n - 1] = base.iter().map(|v| v.max(0.0)).collect();
    for k in (0..n - 1).rev() {
        omega[k] = omega[k + 1]
            .iter()
            .zip(&theta[k + 1])
            .map(|(w, th)| w * th.sin())
            .collect();
        if omega[k].iter().any(|&w| w < -1e-12 * peak) {
            return Err(Error::UnreachableTarget(format!(
                "sin theta_{} turns negative; Omega_{k} would be negative",
                k + 1
            )));
        }
        omega[k].iter_mut().for_each(|w| *w = w.max(0.0));
    }
    let mut angles = Vec::with_capacity(n);
    for k in 0..n {
        let theta_dot: Vec<f64> = if k + 1 < n {
            omega[k + 1]
                .iter()
                .zip(&theta[k + 1])
                .map(|(w, th)| 0.5 * w * th.cos())
                .collect()
        } else {
            vec![0.0; grid.len()]
        };
        angles.push(AngleSeries::new(
            k,
            grid.to_vec(),
            theta[k].clone(),
            omega[k].clone(),
            theta_dot,
        )?);
    }
    let pump: Vec<f64> = omega[0]
        .iter()
        .zip(&theta[0])
        .map(|(w, th)| w * th.sin())
        .collect();
    let stokes: Vec<f64> = omega[0]
        .iter()
        .zip(&theta[0])
        .map(|(w, th)| w * th.cos())
        .collect();
    let pulses = PulseSet::without_detuning(
        PulseEnvelope::tabulated_real(grid, &pump)?,
        PulseEnvelope::tabulated_real(grid, &stokes)?,
    )?;
    let metadata = DesignMetadata {
        kind: "generalized".into(),
        order: n,
        theta_const: spec.theta_n,
        free_constants: spec.free_constants.clone(),
        area: areas[areas.len() - 1],
        ..Default::default()
    };
    Ok(Design {
        pulses,
        angles,
        metadata,
    })
}

/// Dressed amplitudes of the exactly solvable two-level problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticState {
    pub b: [C64; 3],
    pub phi: f64,
}

impl AnalyticState {
    pub fn new(b1: C64, b2: C64, b3: C64) -> Result<Self> {
        let norm = (b1.norm_sqr() + b2.norm_sqr() + b3.norm_sqr()).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized { norm });
        }
        Ok(AnalyticState {
            b: [b1, b2, b3],
            phi: 0.0,
        })
    }

    pub fn from_vector(v: &State) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn as_vector(&self) -> State {
        State::new(self.b[0], self.b[1], self.b[2])
    }

    /// Rotation by an additional phase `dphi` in the `(B1, B2)` plane.
    pub fn rotated(&self, dphi: f64) -> Self {
        let (s, c) = dphi.sin_cos();
        let mi = C64::new(0.0, -1.0);
        let [b1, b2, b3] = self.b;
        AnalyticState {
            b: [b1 * c + mi * b2 * s, b2 * c + mi * b1 * s, b3],
            phi: self.phi + dphi,
        }
    }
}

/// `B1 = B1(0) cos phi - i B2(0) sin phi`, `B2 = B2(0) cos phi - i B1(0) sin phi`,
/// `B3` constant, with `phi = (1/2) int_{t0}^{t} Omega_{n-1}`.
pub fn analytic_evolution(
    omega_prev: &PulseEnvelope,
    b0: &AnalyticState,
    t0: f64,
    t: f64,
    quad: &Quadrature,
) -> Result<AnalyticState> {
    let area = if t >= t0 {
        omega_prev.area(t0, t, quad)?
    } else {
        -omega_prev.area(t, t0, quad)?
    };
    Ok(b0.rotated(0.5 * area))
}

/// Analytic solution on every node of `grid`, starting from `b0` at `grid[0]`.
pub fn analytic_trajectory(
    omega_prev: &PulseEnvelope,
    b0: &AnalyticState,
    grid: &[f64],
    quad: &Quadrature,
) -> Result<Vec<AnalyticState>> {
    check_grid(grid)?;
    let areas = cumulative_area(omega_prev, grid, quad)?;
    Ok(areas.iter().map(|a| b0.rotated(0.5 * a)).collect())
}

/// Same solution from sampled couplings, integrated with the trapezoid rule
/// refined by the cubic end correction of the monotone interpolant.
pub fn analytic_trajectory_sampled(
    series: &AngleSeries,
    b0: &AnalyticState,
) -> Result<Vec<AnalyticState>> {
    let env = PulseEnvelope::tabulated_real(series.times(), series.omega())?;
    analytic_trajectory(&env, b0, series.times(), &Quadrature::default())
}

/// Second-order pulses mapping `sin th1 psi1 - i cos th1 psi2` onto
/// `-sin th1 psi3 - i cos th1 psi2`. `omega0` is rescaled so that its area
/// equals `pi tan th1`; the factor is recorded in the metadata.
pub fn second_order_coherence_pulses(
    omega0: &PulseEnvelope,
    theta1: f64,
    grid: &[f64],
    quad: &Quadrature,
) -> Result<Design> {
    if !(theta1 > 0.0) {
        return Err(Error::DomainViolation(format!(
            "theta_1 must be positive, got {theta1}"
        )));
    }
    if theta1 >= FRAC_PI_2 {
        return Err(Error::UnreachableTarget(
            "theta_1 = pi/2 needs an infinite pulse area".into(),
        ));
    }
    check_grid(grid)?;
    let area = omega0.area(grid[0], grid[grid.len() - 1], quad)?;
    if area == 0.0 {
        return Err(Error::ZeroArea);
    }
    if area < 0.0 {
        return Err(Error::NonpositiveArea(area));
    }
    let target = PI * theta1.tan();
    let factor = target / area;
    if (factor - 1.0).abs() > 1e-9 {
        log::info!("rescaling Omega_0 by {factor:.6} to reach area pi tan theta_1 = {target:.6}");
    }
    let base = omega0.scaled(factor / theta1.sin());
    let mut out = design(&MatchedSpec::new(2, theta1, base), grid, quad)?;
    out.metadata.kind = "second_order_coherence".into();
    out.metadata.rescale_factor = Some(factor);
    out.metadata.area = target;
    Ok(out)
}

/// Asymptotic populations after second-order transfer from state 1.
pub fn second_order_transfer_populations(area: f64) -> Result<[f64; 3]> {
    if !(area > 0.0) {
        return Err(Error::NonpositiveArea(area));
    }
    let pi2 = PI * PI;
    let q = pi2 + area * area;
    let r = q.sqrt();
    let p1 = pi2 / q * (0.5 * r).sin().powi(2);
    let p2 = 4.0 * pi2 * area * area / (q * q) * (0.25 * r).sin().powi(4);
    let p3 = (area * area + pi2 * (0.5 * r).cos()).powi(2) / (q * q);
    Ok([p1, p2, p3])
}

/// Areas `pi sqrt(16 n^2 - 1)`, `n = 1..=n_max`, giving complete transfer.
pub fn complete_transfer_areas(n_max: usize) -> Vec<f64> {
    (1..=n_max)
        .map(|n| PI * (16.0 * (n * n) as f64 - 1.0).sqrt())
        .collect()
}

/// Gaussian `Omega_0` of total area `area` (unit width) and the second-order
/// pair for population transfer: `tan theta_1 = area / pi`.
pub fn second_order_transfer_pulses(area: f64, grid: &[f64], quad: &Quadrature) -> Result<Design> {
    if !(area > 0.0) {
        return Err(Error::NonpositiveArea(area));
    }
    let omega0 = PulseEnvelope::gaussian(area / PI.sqrt(), 1.0)?;
    second_order_coherence_pulses(&omega0, (area / PI).atan(), grid, quad)
}

/// The exactly solvable sech-squared model.
#[derive(Clone, Debug)]
pub struct VitanovModel {
    pub omega0: PulseEnvelope,
    pub pulses: PulseSet,
    pub angles0: AngleSeries,
}

/// `Omega_0 = (alpha / 2T) sech^2(t/T)`, `theta_0 = (pi/4)[tanh(t/T) + 1]`,
/// for which `tan theta_1 = alpha / pi`.
pub fn vitanov_model(alpha: f64, width: f64, grid: &[f64]) -> Result<VitanovModel> {
    if !(alpha > 0.0) {
        return Err(Error::DomainViolation(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(width > 0.0) {
        return Err(Error::InvalidPulse(format!(
            "width must be positive, got {width}"
        )));
    }
    check_grid(grid)?;
    let omega0 = PulseEnvelope::sech_squared(alpha / (2.0 * width), width)?;
    let omega: Vec<f64> = grid.iter().map(|&t| omega0.eval_real(t)).collect();
    let theta: Vec<f64> = grid
        .iter()
        .map(|&t| 0.25 * PI * ((t / width).tanh() + 1.0))
        .collect();
    let theta_dot: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let s = 1.0 / (t / width).cosh();
            0.25 * PI / width * s * s
        })
        .collect();
    let pump: Vec<f64> = omega
        .iter()
        .zip(&theta)
        .map(|(w, th)| w * th.sin())
        .collect();
    let stokes: Vec<f64> = omega
        .iter()
        .zip(&theta)
        .map(|(w, th)| w * th.cos())
        .collect();
    let pulses = PulseSet::without_detuning(
        PulseEnvelope::tabulated_real(grid, &pump)?,
        PulseEnvelope::tabulated_real(grid, &stokes)?,
    )?;
    let angles0 = AngleSeries::new(0, grid.to_vec(), theta, omega, theta_dot)?;
    Ok(VitanovModel {
        omega0,
        pulses,
        angles0,
    })
}

/// Third-order pulses for a given `Omega_0`:
/// `f = (alpha/2) int Omega_0`, `tan theta_1 = sqrt(1 - f^2) / |f|`,
/// `theta_0 = theta_2 + pi/2 + (1/alpha)[1 - sqrt(1 - f^2)]`.
///
/// State 3: `alpha = -4 pi / (pi^2 + A^2)`, `cot theta_2 = alpha`.
/// State 2: `alpha = 2 / A`, `theta_2 = pi/2`.
///
/// The returned angle series are those of the designed pulses under the
/// basis recursion (`theta_1 = atan2(Omega_0, 2 theta_0')`), in which the
/// constant angle is `atan2(1, -alpha)`. The closed-form-convention values are
/// in the metadata and in [`third_order_closed_form_angles`].
pub fn third_order_design(
    omega0: &PulseEnvelope,
    target: ThirdOrderTarget,
    grid: &[f64],
    quad: &Quadrature,
) -> Result<Design> {
    check_grid(grid)?;
    if !omega0.is_real() {
        return Err(Error::InvalidPulse("Omega_0 must be real".into()));
    }
    let areas = cumulative_area(omega0, grid, quad)?;
    let area = areas[areas.len() - 1];
    if area == 0.0 {
        return Err(Error::ZeroArea);
    }
    if area < 0.0 {
        return Err(Error::NonpositiveArea(area));
    }
    let (alpha, theta2) = third_order_constants(area, target);
    if target == ThirdOrderTarget::State3 && area < 5.0 * PI {
        log::warn!(
            "third-order state-3 design assumes A >> pi; A/pi = {:.3}",
            area / PI
        );
    }
    let f: Vec<f64> = areas.iter().map(|a| 0.5 * alpha * a).collect();
    if let Some(bad) = f.iter().position(|v| v * v > 1.0 + 1e-12) {
        return Err(Error::DomainViolation(format!(
            "f^2 = {:.6} > 1 at t = {}; alpha inconsistent with the pulse area",
            f[bad] * f[bad],
            grid[bad]
        )));
    }
    let root: Vec<f64> = f.iter().map(|v| (1.0 - v * v).max(0.0).sqrt()).collect();
    let theta0: Vec<f64> = f
        .iter()
        .zip(&root)
        .map(|(v, r)| theta2 + FRAC_PI_2 + v * v / (alpha * (1.0 + r)))
        .collect();

    // validate against the initial conditions the formulas encode
    let th1_start = root[0].atan2(f[0].abs());
    if (th1_start - FRAC_PI_2).abs() > 1e-6 || (theta0[0] - theta2 - FRAC_PI_2).abs() > 1e-6 {
        return Err(Error::DomainViolation(format!(
            "initial conditions not met: theta_1 = {th1_start}, theta_0 - theta_2 = {}",
            theta0[0] - theta2
        )));
    }
    let omega: Vec<f64> = grid.iter().map(|&t| omega0.eval_real(t).max(0.0)).collect();
    let pump: Vec<f64> = omega
        .iter()
        .zip(&theta0)
        .map(|(w, th)| w * th.sin())
        .collect();
    let stokes: Vec<f64> = omega
        .iter()
        .zip(&theta0)
        .map(|(w, th)| w * th.cos())
        .collect();
    let pulses = PulseSet::without_detuning(
        PulseEnvelope::tabulated_real(grid, &pump)?,
        PulseEnvelope::tabulated_real(grid, &stokes)?,
    )?;

    // angle hierarchy of the designed pair under the recursion
    let theta0_dot: Vec<f64> = omega
        .iter()
        .zip(f.iter().zip(&root))
        .map(|(w, (v, r))| if *r > 0.0 { 0.5 * v * w / r } else { 0.0 })
        .collect();
    let theta1: Vec<f64> = root.iter().zip(&f).map(|(r, v)| r.atan2(*v)).collect();
    let omega1: Vec<f64> = omega
        .iter()
        .zip(&root)
        .map(|(w, r)| if *r > 0.0 { w / r } else { 0.0 })
        .collect();
    let theta1_dot: Vec<f64> = omega1.iter().map(|w| -0.5 * alpha * w).collect();
    let theta2_rec = 1.0f64.atan2(-alpha);
    let omega2: Vec<f64> = omega1.iter().map(|w| w * alpha.hypot(1.0)).collect();
    let angles = vec![
        AngleSeries::new(0, grid.to_vec(), theta0, omega, theta0_dot)?,
        AngleSeries::new(1, grid.to_vec(), theta1, omega1, theta1_dot)?,
        AngleSeries::new(
            2,
            grid.to_vec(),
            vec![theta2_rec; grid.len()],
            omega2,
            vec![0.0; grid.len()],
        )?,
    ];
    let final_theta1 = root[root.len() - 1].atan2(f[f.len() - 1].abs());
    let predicted_loss = match target {
        ThirdOrderTarget::State3 => Some(4.0 * PI * PI / (2.0 * PI * PI + area * area)),
        ThirdOrderTarget::State2 => None,
    };
    log::info!(
        "third-order {target:?}: A/pi = {:.4}, alpha = {alpha:.6}, final theta_1 = {final_theta1:.3e}",
        area / PI
    );
    let metadata = DesignMetadata {
        kind: "third_order".into(),
        order: 3,
        theta_const: theta2,
        free_constants: vec![theta2 + FRAC_PI_2, FRAC_PI_2],
        area,
        alpha: Some(alpha),
        target: Some(target),
        rescale_factor: None,
        predicted_loss,
        final_theta1: Some(final_theta1),
    };
    Ok(Design {
        pulses,
        angles,
        metadata,
    })
}

/// `(alpha, theta_2)` for a third-order design of area `area`.
pub fn third_order_constants(area: f64, target: ThirdOrderTarget) -> (f64, f64) {
    match target {
        ThirdOrderTarget::State3 => {
            let alpha = -4.0 * PI / (PI * PI + area * area);
            (alpha, 1.0f64.atan2(alpha))
        }
        ThirdOrderTarget::State2 => (2.0 / area, FRAC_PI_2),
    }
}

/// `(theta_1, theta_2)` in the convention of the closed-form design,
/// `tan theta_1 = sqrt(1 - f^2) / |f|`, from the recorded design.
pub fn third_order_closed_form_angles(design: &Design) -> Result<(AngleSeries, f64)> {
    let meta = &design.metadata;
    if meta.kind != "third_order" {
        return Err(Error::DomainViolation("not a third-order design".into()));
    }
    let rec = &design.angles[1];
    let theta1: Vec<f64> = rec
        .theta()
        .iter()
        .map(|th| th.sin().atan2(th.cos().abs()))
        .collect();
    let theta1_dot: Vec<f64> = rec
        .theta()
        .iter()
        .zip(rec.theta_dot())
        .map(|(th, d)| if th.cos() < 0.0 { -d } else { *d })
        .collect();
    let series = AngleSeries::new(
        1,
        rec.times().to_vec(),
        theta1,
        rec.omega().to_vec(),
        theta1_dot,
    )?;
    Ok((series, meta.theta_const))
}

/// Bare amplitudes of the third-order trapped state.
pub fn third_order_trapped_state(theta0: f64, theta1: f64, theta2: f64) -> State {
    let (s0, c0) = theta0.sin_cos();
    let (s1, c1) = theta1.sin_cos();
    let (s2, c2) = theta2.sin_cos();
    State::new(
        C64::new(0.0, c0 * s1 * s2 - s0 * c2),
        C64::new(0.0, -c1 * s2),
        C64::new(0.0, -(c0 * c2 + s0 * s1 * s2)),
    )
}

/// The trapped state at time `t`, with `theta_0`, `theta_1` interpolated.
pub fn third_order_projection(
    theta0: &AngleSeries,
    theta1: &AngleSeries,
    theta2: f64,
    t: f64,
) -> Result<StateVector> {
    if theta0.times() != theta1.times() {
        return Err(Error::GridMismatch(
            "theta_0 and theta_1 grids differ".into(),
        ));
    }
    match (theta0.theta_at(t), theta1.theta_at(t)) {
        (Some(a), Some(b)) => StateVector::from_vector(third_order_trapped_state(a, b, theta2)),
        _ => Err(Error::DomainViolation(format!(
            "t = {t} outside the angle grid"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adiabatic::{angle0, iterate_angle};
    use crate::dynamics::uniform_grid;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn order_one_gives_identical_envelopes() {
        let grid = uniform_grid(-6.0, 6.0, 401);
        let spec = MatchedSpec::new(1, FRAC_PI_4, PulseEnvelope::sech(2.0, 1.0).unwrap());
        let d = design(&spec, &grid, &Quadrature::default()).unwrap();
        for &t in &grid {
            let (p, s) = (d.pulses.pump.eval_real(t), d.pulses.stokes.eval_real(t));
            assert!((p - s).abs() < 1e-15);
            assert!((p - 2.0 * FRAC_PI_4.sin() / t.cosh()).abs() < 1e-12);
        }
    }

    #[test]
    fn order_two_matches_closed_form() {
        let grid = uniform_grid(-8.0, 8.0, 801);
        let q = Quadrature::default();
        let th1: f64 = 0.6;
        let omega0 = PulseEnvelope::gaussian(1.0, 1.0).unwrap();
        let d = second_order_coherence_pulses(&omega0, th1, &grid, &q).unwrap();
        let a0 = PI * th1.tan();
        let factor = d.metadata.rescale_factor.unwrap();
        for &t in grid.iter().step_by(37) {
            let w = factor * omega0.eval_real(t);
            let at = factor * omega0.area(grid[0], t, &q).unwrap();
            let arg = PI * at / (2.0 * a0);
            assert!((d.pulses.pump.eval_real(t) - w * arg.sin()).abs() < 1e-10);
            assert!((d.pulses.stokes.eval_real(t) - w * arg.cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn order_three_ode_matches_closed_form() {
        // for order 3, theta_0 = c0 + tan(th2)[sin(c1 + cos(th2) A/2) - sin c1]
        let grid = uniform_grid(-10.0, 10.0, 1001);
        let th2: f64 = 1.1;
        let (c0, c1) = (0.2, 0.4);
        let spec = MatchedSpec::new(3, th2, PulseEnvelope::sech_squared(3.0, 1.0).unwrap())
            .with_free_constants(vec![c0, c1]);
        let q = Quadrature::default();
        let d = design(&spec, &grid, &q).unwrap();
        let areas = cumulative_area(&spec.base_envelope, &grid, &q).unwrap();
        for (k, a) in areas.iter().enumerate() {
            let expected = c0 + th2.tan() * ((c1 + 0.5 * th2.cos() * a).sin() - c1.sin());
            assert!((d.angles[0].theta()[k] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn design_rejects_bad_specs() {
        let grid = uniform_grid(-1.0, 1.0, 11);
        let q = Quadrature::default();
        let env = PulseEnvelope::gaussian(1.0, 1.0).unwrap();
        assert!(design(&MatchedSpec::new(0, 0.5, env.clone()), &grid, &q).is_err());
        assert!(design(&MatchedSpec::new(2, PI, env.clone()), &grid, &q).is_err());
        assert!(design(&MatchedSpec::new(2, 0.5, env.scaled(-1.0)), &grid, &q).is_err());
        let bad = MatchedSpec::new(3, 0.5, env).with_free_constants(vec![0.0]);
        assert!(design(&bad, &grid, &q).is_err());
    }

    #[test]
    fn sign_flip_of_lower_angle_is_unreachable() {
        // theta_1 runs past pi, making Omega_0 negative
        let grid = uniform_grid(-6.0, 6.0, 601);
        let spec = MatchedSpec::new(3, 0.05, PulseEnvelope::gaussian(40.0, 1.0).unwrap())
            .with_free_constants(vec![0.0, 2.0]);
        assert!(matches!(
            design(&spec, &grid, &Quadrature::default()),
            Err(Error::UnreachableTarget(_))
        ));
    }

    #[test]
    fn round_trip_recovers_constant_angle() {
        let q = Quadrature::default();
        for (order, th, consts) in [(2usize, 0.7, vec![0.1]), (3, 1.2, vec![0.3, 0.5])] {
            let grid = uniform_grid(-8.0, 8.0, 4001);
            let spec = MatchedSpec::new(order, th, PulseEnvelope::gaussian(4.0, 1.5).unwrap())
                .with_free_constants(consts.clone());
            let d = design(&spec, &grid, &q).unwrap();
            let a0 = angle0(&d.pulses, &grid).unwrap();
            assert!((a0.theta()[0] - consts[0]).abs() < 1e-6);
            let mut a = a0.clone();
            for _ in 1..order {
                a = iterate_angle(&a).unwrap();
            }
            // judged where the physical coupling is not negligible
            let peak = a0.omega().iter().cloned().fold(0.0, f64::max);
            let spread = (0..grid.len())
                .filter(|&k| a0.omega()[k] > 1e-3 * peak)
                .map(|k| (a.theta()[k] - th).abs())
                .fold(0.0, f64::max);
            assert!(spread < 1e-6, "order {order}: spread {spread}");
            let mid = grid.len() / 2;
            assert!((a.theta()[mid] - th).abs() < 1e-6);
        }
    }

    #[test]
    fn analytic_evolution_identity_and_trapping() {
        let q = Quadrature::default();
        let env = PulseEnvelope::gaussian(3.0, 1.0).unwrap();
        let b =
            AnalyticState::new(C64::new(0.6, 0.0), C64::new(0.0, 0.8), C64::new(0.0, 0.0)).unwrap();
        let same = analytic_evolution(&env, &b, 0.3, 0.3, &q).unwrap();
        assert_eq!(same.b, b.b);
        let trapped =
            AnalyticState::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)).unwrap();
        let later = analytic_evolution(&env, &trapped, -5.0, 5.0, &q).unwrap();
        assert_eq!(later.b, trapped.b);
        let back = analytic_evolution(
            &env,
            &analytic_evolution(&env, &b, -1.0, 2.0, &q).unwrap(),
            2.0,
            -1.0,
            &q,
        )
        .unwrap();
        for k in 0..3 {
            assert!((back.b[k] - b.b[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn gaussian_transfer_amplitude() {
        // B1(inf) = pi / sqrt(pi^2 + A^2) sin(sqrt(pi^2 + A^2) / 2)
        let q = Quadrature::new(1e-13);
        for &area in &[PI, 2.0 * PI, 7.3] {
            let th1 = (area / PI).atan();
            let omega1 = PulseEnvelope::gaussian(area / PI.sqrt() / th1.sin(), 1.0).unwrap();
            let b0 = AnalyticState::new(
                C64::new(0.0, 0.0),
                C64::new(0.0, th1.cos()),
                C64::new(th1.sin(), 0.0),
            )
            .unwrap();
            let b = analytic_evolution(&omega1, &b0, -12.0, 12.0, &q).unwrap();
            let r = (PI * PI + area * area).sqrt();
            assert!((b.b[0].norm() - (PI / r * (0.5 * r).sin()).abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn transfer_populations_known_values() {
        let p = second_order_transfer_populations(2.0 * PI).unwrap();
        // frozen from a direct evaluation of the closed forms
        assert!((p[2] - 0.376_497_001_941_333_56).abs() < 1e-12, "{}", p[2]);
        assert!((p[0] - 0.026_263_112_192_168_01).abs() < 1e-12);
        for a in complete_transfer_areas(3) {
            let p = second_order_transfer_populations(a).unwrap();
            assert!((p[2] - 1.0).abs() < 1e-12);
        }
        assert!(second_order_transfer_populations(0.0).is_err());
        let areas = complete_transfer_areas(2);
        assert!((areas[0] - PI * 15f64.sqrt()).abs() < 1e-15);
        assert!((areas[0] - 12.167_336_028).abs() < 1e-9);
        assert!((areas[1] - PI * 63f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn coherence_design_limits() {
        let q = Quadrature::default();
        let grid = uniform_grid(-8.0, 8.0, 101);
        let g = PulseEnvelope::gaussian(1.0, 1.0).unwrap();
        assert!(matches!(
            second_order_coherence_pulses(&g, FRAC_PI_2, &grid, &q),
            Err(Error::UnreachableTarget(_))
        ));
        assert!(matches!(
            second_order_coherence_pulses(&PulseEnvelope::zero(), 0.5, &grid, &q),
            Err(Error::ZeroArea)
        ));
        let d = second_order_coherence_pulses(
            &PulseEnvelope::gaussian(PI.sqrt(), 1.0).unwrap(),
            FRAC_PI_4,
            &grid,
            &q,
        )
        .unwrap();
        assert!((d.metadata.rescale_factor.unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn vitanov_ratio_is_constant() {
        let grid = uniform_grid(-10.0, 10.0, 2001);
        for &alpha in &[0.5, PI, 7.0] {
            let m = vitanov_model(alpha, 0.7, &grid).unwrap();
            let a1 = iterate_angle(&m.angles0).unwrap();
            for th in a1.theta() {
                assert!((th.tan() - alpha / PI).abs() < 1e-9);
            }
            let area = m.omega0.total_area(&Quadrature::new(1e-12)).unwrap();
            assert!((area - alpha).abs() < 1e-9);
        }
        let m = vitanov_model(PI, 1.0, &grid).unwrap();
        let a1 = iterate_angle(&m.angles0).unwrap();
        assert!((a1.theta()[1000] - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn third_order_projection_limits() {
        let th2 = 1.3;
        let s = third_order_trapped_state(th2 + FRAC_PI_2, FRAC_PI_2, th2);
        assert!((s[0].norm() - 1.0).abs() < 1e-12);
        let s = third_order_trapped_state(th2, FRAC_PI_2, th2);
        assert!((s[2].norm() - 1.0).abs() < 1e-12);
        let s = third_order_trapped_state(0.4, 0.0, FRAC_PI_2);
        assert!((s[1].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn third_order_rejects_inconsistent_alpha() {
        // state-2 alpha with a table that integrates past f = 1 cannot occur,
        // so force it through a state-3 design of tiny area: |f| stays small
        let grid = uniform_grid(-12.0, 12.0, 401);
        let q = Quadrature::default();
        let d = third_order_design(
            &PulseEnvelope::sech_squared(0.5, 1.0).unwrap(),
            ThirdOrderTarget::State3,
            &grid,
            &q,
        );
        assert!(d.is_ok());
        assert!(matches!(
            third_order_design(&PulseEnvelope::zero(), ThirdOrderTarget::State2, &grid, &q),
            Err(Error::ZeroArea)
        ));
    }

    #[test]
    fn third_order_initial_conditions() {
        let grid = uniform_grid(-12.0, 12.0, 2001);
        let a = 20.0 * PI;
        let d = third_order_design(
            &PulseEnvelope::sech_squared(a / 2.0, 1.0).unwrap(),
            ThirdOrderTarget::State3,
            &grid,
            &Quadrature::default(),
        )
        .unwrap();
        let (th1, th2) = third_order_closed_form_angles(&d).unwrap();
        assert!((th1.theta()[0] - FRAC_PI_2).abs() < 1e-12);
        assert!((d.angles[0].theta()[0] - th2 - FRAC_PI_2).abs() < 1e-12);
        let c = third_order_projection(&d.angles[0], &th1, th2, grid[0]).unwrap();
        assert!((c.as_vector()[0].norm() - 1.0).abs() < 1e-12);
        let area = d.metadata.area;
        assert!((area - a).abs() < 1e-8);
        assert!(
            (d.metadata.predicted_loss.unwrap() - 4.0 * PI * PI / (2.0 * PI * PI + area * area))
                .abs()
                < 1e-15
        );
    }

    proptest! {
        #[test]
        fn populations_sum_to_one(log_a in (0.1f64).ln()..(100.0f64).ln()) {
            let p = second_order_transfer_populations(PI * log_a.exp()).unwrap();
            prop_assert!((p[0] + p[1] + p[2] - 1.0).abs() < 1e-12);
        }

        #[test]
        fn analytic_state_stays_normalized(phi in -50.0f64..50.0, a in 0.0f64..1.0, ph in -3.0f64..3.0) {
            let b0 = AnalyticState::new(
                C64::new(a.sqrt(), 0.0),
                C64::from_polar((1.0 - a).sqrt() * 0.6, ph),
                C64::new(0.0, (1.0 - a).sqrt() * 0.8),
            ).unwrap();
            let b = b0.rotated(phi);
            let n: f64 = b.b.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
