//! Declarative scenarios: TOML configs, the compiled-in reproductions, the
//! runner that writes CSV artifacts and checks, and the area sweep.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adiabatic::{self, angle_hierarchy, locking_area, project, sinh_grid, transform};
use crate::dynamics::{
    final_populations, propagate_on_grid, uniform_grid, PropagationOptions, StateVector,
    Trajectory, DEFAULT_GRID_POINTS, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::matched::{
    self, analytic_trajectory_sampled, AnalyticState, Design, MatchedSpec, ThirdOrderTarget,
};
use crate::pulses::{fmt_f64, Family, PulseEnvelope, PulseSet};
use crate::quad::Quadrature;

const NORM_ERROR: f64 = 1e-8;
const NORM_WARN: f64 = 1e-12;

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_quad_tol() -> f64 {
    1e-10
}

fn default_initial() -> [[f64; 2]; 3] {
    [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]
}

fn default_width() -> f64 {
    1.0
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// One envelope: a parametric family or a `t,re,im` CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub family: Family,
    /// Complex amplitude as `[re, im]`.
    #[serde(default)]
    pub amplitude: [f64; 2],
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub phase: f64,
    /// Required for `tabulated`; relative paths resolve against the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl PulseSpec {
    pub fn parametric(family: Family, amplitude: Complex64, width: f64) -> Self {
        PulseSpec {
            family,
            amplitude: [amplitude.re, amplitude.im],
            width,
            phase: 0.0,
            file: None,
        }
    }

    pub fn build(&self, base_dir: Option<&Path>) -> Result<PulseEnvelope> {
        let env = match self.family {
            Family::Tabulated => {
                let file = self
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::Config("tabulated pulse needs a `file`".into()))?;
                let path = match base_dir {
                    Some(dir) if file.is_relative() => dir.join(file),
                    _ => file.clone(),
                };
                PulseEnvelope::load_csv(&path)?
            }
            Family::Zero => PulseEnvelope::zero(),
            family => {
                if self.file.is_some() {
                    return Err(Error::Config(format!(
                        "`file` is only valid for tabulated pulses, not {family}"
                    )));
                }
                let [re, im] = self.amplitude;
                PulseEnvelope::parametric(family, Complex64::new(re, im), self.width)?
            }
        };
        Ok(if self.phase != 0.0 {
            env.with_phase(self.phase)
        } else {
            env
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsesSpec {
    pub pump: PulseSpec,
    pub stokes: PulseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detuning: Option<PulseSpec>,
}

/// Pulses produced by one of the designers instead of listed explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    /// General matched pulses: `theta` is the constant angle of order
    /// `order - 1` and `base` the envelope of that order.
    Matched {
        order: usize,
        theta: f64,
        #[serde(default)]
        free_constants: Vec<f64>,
        base: PulseSpec,
    },
    /// Second-order pair with `Omega_0` rescaled to area `pi tan theta1`.
    Coherence { omega0: PulseSpec, theta1: f64 },
    /// Second-order transfer pair for a unit-width Gaussian of total area `area`.
    Transfer { area: f64 },
    ThirdOrder {
        omega0: PulseSpec,
        target: ThirdOrderTarget,
    },
    /// Replaces the detuning of `[pulses]` with `i 2 theta_0'`.
    Locking,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Uniform,
    /// `t = scale sinh(u)` with uniform `u`.
    Sinh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: DEFAULT_GRID_POINTS,
            spacing: Spacing::Uniform,
            scale: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|value - target| <= tolerance`.
    Within,
    AtLeast,
    AtMost,
    /// `target / tolerance <= value <= target * tolerance`.
    Factor,
}

/// Quantities a check can test:
///
/// - `final_p1..3`, `min_p1..3`, `max_p1..3`: bare populations;
/// - `min_dressed_p3`, `mean_dressed_p3`: `|B3|^2` in the basis of `order`;
/// - `norm_drift`;
/// - `locking_area`: whole-line area of `2 theta_0'`;
/// - `loss_ratio`: `(1 - p3) / predicted_loss` of a third-order design;
/// - `oracle_error`: largest `|B - B_analytic|` of a matched design;
/// - `unitarity_error`: largest `|V V^dagger - 1|` over the requested orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub quantity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    pub comparison: Comparison,
    pub target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl CheckSpec {
    pub fn new(quantity: &str, comparison: Comparison, target: f64) -> Self {
        CheckSpec {
            quantity: quantity.into(),
            order: None,
            comparison,
            target,
            tolerance: None,
        }
    }

    pub fn within(quantity: &str, target: f64, tolerance: f64) -> Self {
        Self::new(quantity, Comparison::Within, target).with_tolerance(tolerance)
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = Some(tol);
        self
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = Some(order);
        self
    }

    fn label(&self) -> String {
        match self.order {
            Some(n) => format!("{}[order {n}]", self.quantity),
            None => self.quantity.clone(),
        }
    }

    fn passes(&self, value: f64) -> bool {
        let tol = self.tolerance.unwrap_or(0.0);
        match self.comparison {
            Comparison::Within => (value - self.target).abs() <= tol,
            Comparison::AtLeast => value >= self.target,
            Comparison::AtMost => value <= self.target,
            Comparison::Factor => value >= self.target / tol && value <= self.target * tol,
        }
    }

    fn describe(&self) -> String {
        let tol = self.tolerance.unwrap_or(0.0);
        match self.comparison {
            Comparison::Within => format!("{} +/- {}", self.target, tol),
            Comparison::AtLeast => format!(">= {}", self.target),
            Comparison::AtMost => format!("<= {}", self.target),
            Comparison::Factor => format!("{} within factor {}", self.target, tol),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub window: [f64; 2],
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_quad_tol")]
    pub quadrature_tol: f64,
    #[serde(default)]
    pub grid: GridSpec,
    /// Amplitudes `[re, im]` of states 1, 2, 3.
    #[serde(default = "default_initial")]
    pub initial_state: [[f64; 2]; 3],
    /// Generalized basis orders to project the trajectory onto.
    #[serde(default)]
    pub orders: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulses: Option<PulsesSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSpec>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    /// Directory against which pulse files resolve.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    /// A config with default settings and no pulses or checks yet.
    pub fn new(name: &str, window: [f64; 2]) -> Self {
        ScenarioConfig {
            name: name.into(),
            description: String::new(),
            window,
            tol: DEFAULT_TOL,
            quadrature_tol: default_quad_tol(),
            grid: GridSpec::default(),
            initial_state: default_initial(),
            orders: Vec::new(),
            pulses: None,
            design: None,
            checks: Vec::new(),
            base_dir: None,
        }
    }

    pub fn with_description(mut self, description: &str) -> Self {
        self.description = description.into();
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scenario `{}`: {msg}", self.name)));
        let [t0, t1] = self.window;
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return bad(format!(
                "window [{t0}, {t1}] must be finite with t_min < t_max"
            ));
        }
        if !(self.tol > 0.0) || !(self.quadrature_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.grid.points < 2 {
            return bad("grid needs at least two points".into());
        }
        if self.grid.spacing == Spacing::Sinh && !self.grid.scale.is_some_and(|s| s > 0.0) {
            return bad("sinh spacing needs a positive `scale`".into());
        }
        match (&self.pulses, &self.design) {
            (None, None) => return bad("needs `[pulses]` or `[design]`".into()),
            (Some(_), Some(d)) if !matches!(d, DesignSpec::Locking) => {
                return bad("`[pulses]` combines only with the locking design".into())
            }
            (None, Some(DesignSpec::Locking)) => {
                return bad("the locking design needs `[pulses]`".into())
            }
            _ => {}
        }
        let norm = self.initial_vector().norm();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_ERROR {
            return bad(format!("initial state has norm {norm}"));
        }
        for c in &self.checks {
            if matches!(c.comparison, Comparison::Within | Comparison::Factor)
                && c.tolerance.is_none()
            {
                return bad(format!("check `{}` needs a tolerance", c.quantity));
            }
            if c.quantity.contains("dressed") && c.order.is_none() {
                return bad(format!("check `{}` needs an order", c.quantity));
            }
        }
        Ok(())
    }

    fn initial_vector(&self) -> crate::ode::State {
        let c = |k: usize| Complex64::new(self.initial_state[k][0], self.initial_state[k][1]);
        crate::ode::State::new(c(0), c(1), c(2))
    }

    pub fn initial_state(&self) -> Result<StateVector> {
        let v = self.initial_vector();
        let norm = v.norm();
        if (norm - 1.0).abs() > NORM_WARN {
            log::warn!("{}: initial state norm {norm}, normalizing", self.name);
            StateVector::normalized(v)
        } else {
            StateVector::from_vector(v)
        }
    }

    pub fn time_grid(&self) -> Result<Vec<f64>> {
        let [t0, t1] = self.window;
        match self.grid.spacing {
            Spacing::Uniform => Ok(uniform_grid(t0, t1, self.grid.points)),
            Spacing::Sinh => sinh_grid(t0, t1, self.grid.scale.unwrap_or(1.0), self.grid.points),
        }
    }

    fn quadrature(&self) -> Quadrature {
        Quadrature {
            abs_tol: self.quadrature_tol,
        }
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub tol: Option<f64>,
    pub grid_points: Option<usize>,
    pub orders: Option<Vec<usize>>,
}

impl RunOptions {
    pub fn apply(&self, cfg: &ScenarioConfig) -> Result<ScenarioConfig> {
        let mut cfg = cfg.clone();
        if let Some(tol) = self.tol {
            cfg.tol = tol;
        }
        if let Some(n) = self.grid_points {
            cfg.grid.points = n;
        }
        if let Some(orders) = &self.orders {
            cfg.orders = orders.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub spec: CheckSpec,
    pub value: f64,
    pub passed: bool,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} = {:.6e} (expected {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.spec.label(),
            self.value,
            self.spec.describe()
        )
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub name: String,
    pub final_populations: [f64; 3],
    pub norm_drift: f64,
    /// Derived numbers worth printing (areas, design constants, ...).
    pub extras: BTreeMap<String, f64>,
    pub checks: Vec<CheckResult>,
    pub elapsed_seconds: f64,
    pub bare: Trajectory,
    pub dressed: Vec<Trajectory>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, quantity: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.spec.quantity == quantity)
    }

    pub fn summary(&self) -> String {
        let [p1, p2, p3] = self.final_populations;
        let mut s = format!(
            "scenario {}\nfinal populations: p1 = {p1:.8} p2 = {p2:.8} p3 = {p3:.8}\nnorm drift: {:.3e}\n",
            self.name, self.norm_drift
        );
        for (k, v) in &self.extras {
            s += &format!("{k}: {v:.10e}\n");
        }
        for c in &self.checks {
            s += &format!("{c}\n");
        }
        s += &format!(
            "{} ({:.3} s)\n",
            if self.passed() { "PASSED" } else { "FAILED" },
            self.elapsed_seconds
        );
        s
    }
}

struct Setup {
    pulses: PulseSet,
    design: Option<Design>,
}

fn build_pulses(cfg: &ScenarioConfig, grid: &[f64]) -> Result<Setup> {
    let dir = cfg.base_dir.as_deref();
    let quad = cfg.quadrature();
    let explicit = match &cfg.pulses {
        Some(p) => {
            let detuning = match &p.detuning {
                Some(d) => d.build(dir)?,
                None => PulseEnvelope::zero(),
            };
            Some(PulseSet::new(
                p.pump.build(dir)?,
                p.stokes.build(dir)?,
                detuning,
            )?)
        }
        None => None,
    };
    let design = match &cfg.design {
        None => None,
        Some(DesignSpec::Locking) => {
            let base = explicit.expect("validated");
            let angles0 = adiabatic::angle0(&base, grid)?;
            let detuning = adiabatic::design_locking_detuning(&angles0)?;
            return Ok(Setup {
                pulses: base.with_detuning(detuning),
                design: None,
            });
        }
        Some(DesignSpec::Matched {
            order,
            theta,
            free_constants,
            base,
        }) => {
            let mut spec = MatchedSpec::new(*order, *theta, base.build(dir)?);
            if !free_constants.is_empty() {
                spec = spec.with_free_constants(free_constants.clone());
            }
            Some(matched::design(&spec, grid, &quad)?)
        }
        Some(DesignSpec::Coherence { omega0, theta1 }) => Some(
            matched::second_order_coherence_pulses(&omega0.build(dir)?, *theta1, grid, &quad)?,
        ),
        Some(DesignSpec::Transfer { area }) => {
            Some(matched::second_order_transfer_pulses(*area, grid, &quad)?)
        }
        Some(DesignSpec::ThirdOrder { omega0, target }) => Some(matched::third_order_design(
            &omega0.build(dir)?,
            *target,
            grid,
            &quad,
        )?),
    };
    match design {
        Some(d) => Ok(Setup {
            pulses: d.pulses.clone(),
            design: Some(d),
        }),
        None => Ok(Setup {
            pulses: explicit.expect("validated"),
            design: None,
        }),
    }
}

/// Basis transforms of the requested orders: from the design's exact angles
/// where they reach far enough, otherwise from the angle iteration.
fn transforms(
    setup: &Setup,
    grid: &[f64],
    orders: &[usize],
) -> Result<Vec<adiabatic::BasisTransform>> {
    let top = orders.iter().copied().max().unwrap_or(0);
    if top == 0 {
        return Ok(Vec::new());
    }
    let angles = match &setup.design {
        Some(d) if d.angles.len() >= top => d.angles.clone(),
        _ => angle_hierarchy(&setup.pulses, grid, top - 1)?,
    };
    orders.iter().map(|&n| transform(n, &angles[..n])).collect()
}

/// Largest deviation between the propagated dressed amplitudes of a design
/// and its analytic two-level solution.
fn oracle_error(design: &Design, bare: &Trajectory, c0: &StateVector) -> Result<f64> {
    let n = design.metadata.order;
    let xf = transform(n, &design.angles)?;
    let numeric = project(bare, &xf)?;
    let b0 = AnalyticState::from_vector(&(xf.v[0] * c0.as_vector()))?;
    let analytic = analytic_trajectory_sampled(design.top_coupling(), &b0)?;
    Ok(numeric
        .states
        .iter()
        .zip(&analytic)
        .map(|(b, a)| (b - a.as_vector()).norm())
        .fold(0.0, f64::max))
}

fn population_quantity(q: &str, bare: &Trajectory, finals: &[f64; 3]) -> Option<f64> {
    let (kind, k) = q.rsplit_once("_p")?;
    let k: usize = k.parse().ok()?;
    if !(1..=3).contains(&k) {
        return None;
    }
    match kind {
        "final" => Some(finals[k - 1]),
        "min" => Some(bare.min_population(k - 1)),
        "max" => Some(bare.max_population(k - 1)),
        _ => None,
    }
}

fn write_outputs(dir: &Path, setup: &Setup, report: &Report) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report.bare.save_csv(&dir.join("trajectory.csv"))?;
    for t in &report.dressed {
        t.save_csv(&dir.join(format!("dressed_order{}.csv", t.basis_order)))?;
    }
    if let Some(d) = &setup.design {
        d.save(dir, "design")?;
    }
    if setup.pulses.detuning.table().is_some() {
        setup.pulses.detuning.save_csv(
            &dir.join("detuning.csv"),
            &["designed detuning".to_string()],
        )?;
    }
    let path = dir.join("summary.txt");
    std::fs::write(&path, report.summary()).map_err(|e| Error::io(&path, e))
}

/// Runs one scenario and, with an output directory, writes its artifacts
/// into `<out_dir>/<name>/`.
pub fn run(config: &ScenarioConfig, options: &RunOptions) -> Result<Report> {
    run_inner(config, options).map_err(|e| e.in_scenario(&config.name))
}

fn run_inner(config: &ScenarioConfig, options: &RunOptions) -> Result<Report> {
    let start = Instant::now();
    let cfg = options.apply(config)?;
    let grid = cfg.time_grid()?;
    let c0 = cfg.initial_state()?;
    let setup = build_pulses(&cfg, &grid)?;
    let prop = PropagationOptions::default()
        .with_tol(cfg.tol)
        .with_grid_points(grid.len());
    let bare = propagate_on_grid(&setup.pulses, &c0, &grid, &prop)?;
    let finals = final_populations(&bare)?;

    let mut orders = cfg.orders.clone();
    for c in &cfg.checks {
        if let Some(n) = c.order {
            if !orders.contains(&n) {
                orders.push(n);
            }
        }
    }
    orders.sort_unstable();
    orders.dedup();
    orders.retain(|&n| n > 0);
    let xfs = transforms(&setup, &grid, &orders)?;
    let dressed = xfs
        .iter()
        .map(|xf| project(&bare, xf))
        .collect::<Result<Vec<_>>>()?;

    let quad = cfg.quadrature();
    let mut extras = BTreeMap::new();
    if let Some(d) = &setup.design {
        extras.insert("design_area".into(), d.metadata.area);
        extras.insert("theta_const".into(), d.metadata.theta_const);
        if let Some(a) = d.metadata.alpha {
            extras.insert("alpha".into(), a);
        }
        if let Some(l) = d.metadata.predicted_loss {
            extras.insert("predicted_loss".into(), l);
        }
        if let Some(f) = d.metadata.rescale_factor {
            extras.insert("rescale_factor".into(), f);
        }
    }
    if matches!(cfg.design, Some(DesignSpec::Locking)) {
        let table_area = setup.pulses.detuning.clone().with_phase(-FRAC_PI_2).area(
            grid[0],
            grid[grid.len() - 1],
            &quad,
        )?;
        extras.insert("locking_area_window".into(), table_area);
    }

    let mut checks = Vec::new();
    for spec in &cfg.checks {
        let q = spec.quantity.as_str();
        let value = match q {
            "norm_drift" => bare.norm_drift,
            "min_dressed_p3" | "mean_dressed_p3" => {
                let n = spec.order.expect("validated");
                let t = dressed
                    .iter()
                    .find(|t| t.basis_order == n)
                    .expect("order was projected");
                let p = t.population(2);
                if q.starts_with("min") {
                    t.min_population(2)
                } else {
                    p.iter().sum::<f64>() / p.len() as f64
                }
            }
            "locking_area" => {
                let mut base = setup.pulses.clone();
                if let Some(p) = &cfg.pulses {
                    base.pump = p.pump.build(cfg.base_dir.as_deref())?;
                    base.stokes = p.stokes.build(cfg.base_dir.as_deref())?;
                }
                let area = locking_area(&base, &quad)?;
                extras.insert("locking_area".into(), area);
                area
            }
            "loss_ratio" => {
                let loss = setup
                    .design
                    .as_ref()
                    .and_then(|d| d.metadata.predicted_loss)
                    .ok_or_else(|| {
                        Error::Config("loss_ratio needs a state-3 third-order design".into())
                    })?;
                (1.0 - finals[2]) / loss
            }
            "oracle_error" => {
                let d = setup
                    .design
                    .as_ref()
                    .ok_or_else(|| Error::Config("oracle_error needs a matched design".into()))?;
                oracle_error(d, &bare, &c0)?
            }
            "unitarity_error" => xfs
                .iter()
                .map(|x| x.max_unitarity_error())
                .fold(0.0, f64::max),
            _ => population_quantity(q, &bare, &finals)
                .ok_or_else(|| Error::Config(format!("unknown check quantity `{q}`")))?,
        };
        checks.push(CheckResult {
            spec: spec.clone(),
            value,
            passed: spec.passes(value),
        });
    }

    let report = Report {
        name: cfg.name.clone(),
        final_populations: finals,
        norm_drift: bare.norm_drift,
        extras,
        checks,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        bare,
        dressed,
    };
    if let Some(out) = &options.out_dir {
        write_outputs(&out.join(&cfg.name), &setup, &report)?;
    }
    Ok(report)
}

fn ramps(detuning: Option<PulseSpec>) -> PulsesSpec {
    PulsesSpec {
        pump: PulseSpec::parametric(Family::RampedSin, 20.0.into(), 0.1),
        stokes: PulseSpec::parametric(Family::RampedCos, 20.0.into(), 0.1),
        detuning,
    }
}

/// The ramps never switch off, so the populations keep drifting slowly at
/// the window edges; a long sinh-spaced window reaches the asymptotic values.
fn ramp_grid() -> GridSpec {
    GridSpec {
        points: 4001,
        spacing: Spacing::Sinh,
        scale: Some(0.1),
    }
}

/// Tabulated designed pulses need a finer grid than the default for the
/// analytic oracle to hold to 1e-6.
fn design_grid() -> GridSpec {
    GridSpec {
        points: 4000,
        ..GridSpec::default()
    }
}

fn drift_check() -> CheckSpec {
    CheckSpec::new("norm_drift", Comparison::AtMost, 1e-8)
}

/// Names of the compiled-in scenarios, in listing order.
pub const BUILTIN_NAMES: [&str; 6] = [
    "fig3_no_detuning",
    "fig3_with_detuning",
    "fig5_coherence",
    "fig7_third_order_state3",
    "fig8_third_order_state2",
    "locking_detuning",
];

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    let cfg = match name {
        "fig3_no_detuning" => {
            let mut c = ScenarioConfig::new(name, [-100.0, 100.0])
                .with_description("ramped pump and Stokes in the loop, no detuning");
            c.grid = ramp_grid();
            c.pulses = Some(ramps(None));
            c.checks = vec![CheckSpec::within("final_p3", 0.70, 0.04), drift_check()];
            c
        }
        "fig3_with_detuning" => {
            let mut c = ScenarioConfig::new(name, [-100.0, 100.0]).with_description(
                "ramped pulses plus an imaginary sech detuning; dressed orders 1 and 2",
            );
            c.grid = ramp_grid();
            c.pulses = Some(ramps(Some(PulseSpec::parametric(
                Family::Sech,
                Complex64::new(0.0, -13.4),
                0.2,
            ))));
            c.orders = vec![1, 2];
            c.checks = vec![
                CheckSpec::new("final_p3", Comparison::AtLeast, 0.99),
                CheckSpec::within("min_dressed_p3", 0.2, 0.1).with_order(1),
                CheckSpec::new("min_dressed_p3", Comparison::AtLeast, 0.95).with_order(2),
                drift_check(),
            ];
            c
        }
        "fig5_coherence" => {
            let mut c = ScenarioConfig::new(name, [-8.0, 8.0])
                .with_description("second-order pulses mapping a 1-2 superposition onto 2-3");
            c.initial_state = [[FRAC_1_SQRT_2, 0.0], [0.0, -FRAC_1_SQRT_2], [0.0, 0.0]];
            c.design = Some(DesignSpec::Coherence {
                omega0: PulseSpec::parametric(Family::Gaussian, PI.sqrt().into(), 1.0),
                theta1: 0.25 * PI,
            });
            c.orders = vec![2];
            c.checks = vec![
                CheckSpec::within("min_p2", 0.5, 1e-4),
                CheckSpec::within("max_p2", 0.5, 1e-4),
                CheckSpec::within("final_p3", 0.5, 1e-4),
                CheckSpec::new("final_p1", Comparison::AtMost, 1e-4),
                CheckSpec::new("oracle_error", Comparison::AtMost, 1e-6),
                drift_check(),
            ];
            c
        }
        "fig7_third_order_state3" => {
            let area = 20.0 * PI;
            let mut c = ScenarioConfig::new(name, [-12.0, 12.0]).with_description(
                "third-order transfer into state 3, sech^2 envelope of area 20 pi",
            );
            c.design = Some(DesignSpec::ThirdOrder {
                omega0: PulseSpec::parametric(Family::SechSquared, (0.5 * area).into(), 1.0),
                target: ThirdOrderTarget::State3,
            });
            c.grid = design_grid();
            c.orders = vec![3];
            c.checks = vec![
                CheckSpec::new("loss_ratio", Comparison::Factor, 1.0).with_tolerance(1.5),
                CheckSpec::new("max_p2", Comparison::AtMost, 0.05),
                CheckSpec::new("oracle_error", Comparison::AtMost, 1e-6),
                drift_check(),
            ];
            c
        }
        "fig8_third_order_state2" => {
            let area = 16.0;
            let mut c = ScenarioConfig::new(name, [-12.0, 12.0])
                .with_description("third-order transfer into state 2, sech^2 envelope of area 16");
            c.design = Some(DesignSpec::ThirdOrder {
                omega0: PulseSpec::parametric(Family::SechSquared, (0.5 * area).into(), 1.0),
                target: ThirdOrderTarget::State2,
            });
            c.grid = design_grid();
            c.orders = vec![3];
            c.checks = vec![
                CheckSpec::new("final_p2", Comparison::AtLeast, 0.95),
                CheckSpec::new("oracle_error", Comparison::AtMost, 1e-6),
                drift_check(),
            ];
            c
        }
        "locking_detuning" => {
            let mut c = ScenarioConfig::new(name, [-1000.0, 1000.0]).with_description(
                "ramped pulses with the detuning i 2 theta_0' that decouples the dark state",
            );
            c.pulses = Some(ramps(None));
            c.design = Some(DesignSpec::Locking);
            c.grid = ramp_grid();
            c.checks = vec![
                CheckSpec::new("max_p2", Comparison::AtMost, 1e-8),
                CheckSpec::within("locking_area", PI, 1e-8),
                drift_check(),
            ];
            c
        }
        _ => return None,
    };
    Some(cfg)
}

pub fn builtins() -> Vec<ScenarioConfig> {
    BUILTIN_NAMES.iter().filter_map(|n| builtin(n)).collect()
}

/// Resolves a built-in name or a path to a TOML config.
pub fn resolve(name_or_path: &str) -> Result<ScenarioConfig> {
    if let Some(cfg) = builtin(name_or_path) {
        return Ok(cfg);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return ScenarioConfig::load(path);
    }
    Err(Error::Config(format!(
        "`{name_or_path}` is neither a built-in scenario nor a config file"
    )))
}

/// Runs several scenarios concurrently; results keep the input order.
pub fn run_many(configs: &[ScenarioConfig], options: &RunOptions) -> Vec<Result<Report>> {
    configs.par_iter().map(|c| run(c, options)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Designer {
    Second,
    ThirdState3,
    ThirdState2,
}

impl std::str::FromStr for Designer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "second" => Ok(Designer::Second),
            "third-state3" => Ok(Designer::ThirdState3),
            "third-state2" => Ok(Designer::ThirdState2),
            _ => Err(Error::Config(format!(
                "unknown designer `{s}` (second, third-state3, third-state2)"
            ))),
        }
    }
}

impl fmt::Display for Designer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Designer::Second => "second",
            Designer::ThirdState3 => "third-state3",
            Designer::ThirdState2 => "third-state2",
        })
    }
}

#[derive(Debug)]
pub struct SweepRow {
    pub area: f64,
    /// Closed-form final populations, where a formula exists.
    pub formula: Option<[f64; 3]>,
    pub numeric: Result<[f64; 3]>,
}

impl SweepRow {
    pub fn p3_formula(&self) -> Option<f64> {
        self.formula.map(|p| p[2])
    }

    pub fn p3_numeric(&self) -> Option<f64> {
        self.numeric.as_ref().ok().map(|p| p[2])
    }
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub tol: f64,
    pub grid_points: usize,
    pub quadrature_tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tol: DEFAULT_TOL,
            grid_points: DEFAULT_GRID_POINTS,
            quadrature_tol: default_quad_tol(),
        }
    }
}

fn sweep_row(area: f64, designer: Designer, opts: &SweepOptions) -> SweepRow {
    let formula = match designer {
        Designer::Second => matched::second_order_transfer_populations(area).ok(),
        Designer::ThirdState3 => {
            let loss = 4.0 * PI * PI / (2.0 * PI * PI + area * area);
            (area > 0.0).then_some([f64::NAN, f64::NAN, 1.0 - loss])
        }
        Designer::ThirdState2 => None,
    };
    let numeric = sweep_numeric(area, designer, opts);
    if let Err(e) = &numeric {
        log::warn!("sweep row A = {area}: {e}");
    }
    SweepRow {
        area,
        formula,
        numeric,
    }
}

fn sweep_numeric(area: f64, designer: Designer, opts: &SweepOptions) -> Result<[f64; 3]> {
    if !(area > 0.0 && area.is_finite()) {
        return Err(Error::NonpositiveArea(area));
    }
    let quad = Quadrature {
        abs_tol: opts.quadrature_tol,
    };
    let (window, design) = match designer {
        Designer::Second => {
            let grid = uniform_grid(-8.0, 8.0, opts.grid_points);
            (
                grid.clone(),
                matched::second_order_transfer_pulses(area, &grid, &quad)?,
            )
        }
        Designer::ThirdState3 | Designer::ThirdState2 => {
            let target = if designer == Designer::ThirdState3 {
                ThirdOrderTarget::State3
            } else {
                ThirdOrderTarget::State2
            };
            let grid = uniform_grid(-12.0, 12.0, opts.grid_points);
            let omega0 = PulseEnvelope::sech_squared(0.5 * area, 1.0)?;
            (
                grid.clone(),
                matched::third_order_design(&omega0, target, &grid, &quad)?,
            )
        }
    };
    let prop = PropagationOptions::default()
        .with_tol(opts.tol)
        .with_grid_points(window.len());
    let traj = propagate_on_grid(&design.pulses, &StateVector::basis(0), &window, &prop)?;
    final_populations(&traj)
}

/// Closed-form and propagated final populations for every area, computed
/// concurrently. A failing row keeps its error and the sweep continues.
pub fn sweep(areas: &[f64], designer: Designer, opts: &SweepOptions) -> Vec<SweepRow> {
    areas
        .par_iter()
        .map(|&a| sweep_row(a, designer, opts))
        .collect()
}

/// `A_over_pi,p3_formula,p3_numeric`; a missing formula is an empty field
/// and a failed row reads `failed`.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["A_over_pi", "p3_formula", "p3_numeric"])?;
    for r in rows {
        w.write_record(&[
            fmt_f64(r.area / PI),
            r.p3_formula().map(fmt_f64).unwrap_or_default(),
            r.p3_numeric()
                .map(fmt_f64)
                .unwrap_or_else(|| "failed".into()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
