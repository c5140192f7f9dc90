//! Pulse envelopes: evaluation, areas, and tabulated import/export.
//!
//! Every envelope is `amplitude * exp(i * phase) * shape(t / width)`. The
//! tabulated family interpolates complex samples with a monotone cubic and
//! vanishes outside its sample range.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::quad::{self, Quadrature};

/// Relative imaginary part below which a parametric envelope counts as real.
const REAL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `sin(atan(t/T)/2 + pi/4)`: rises from 0 to 1.
    RampedSin,
    /// `cos(atan(t/T)/2 + pi/4)`: falls from 1 to 0.
    RampedCos,
    Sech,
    /// `exp(-(t/T)^2)`.
    Gaussian,
    SechSquared,
    Tabulated,
    Zero,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::RampedSin => "ramped_sin",
            Family::RampedCos => "ramped_cos",
            Family::Sech => "sech",
            Family::Gaussian => "gaussian",
            Family::SechSquared => "sech_squared",
            Family::Tabulated => "tabulated",
            Family::Zero => "zero",
        };
        f.write_str(s)
    }
}

/// Complex samples of a tabulated envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    re: MonotoneCubic,
    im: MonotoneCubic,
}

impl Table {
    pub fn new(samples: &[(f64, Complex64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidPulse("tabulated pulse needs samples".into()));
        }
        if samples
            .iter()
            .any(|(t, v)| !t.is_finite() || !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::InvalidPulse(
                "tabulated samples must be finite".into(),
            ));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidPulse(
                "tabulated sample times must be strictly increasing".into(),
            ));
        }
        let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let re = samples.iter().map(|s| s.1.re).collect();
        let im = samples.iter().map(|s| s.1.im).collect();
        Ok(Table {
            re: MonotoneCubic::new(ts.clone(), re),
            im: MonotoneCubic::new(ts, im),
        })
    }

    pub fn times(&self) -> &[f64] {
        self.re.xs()
    }

    pub fn len(&self) -> usize {
        self.re.xs().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, Complex64)> + '_ {
        self.re
            .xs()
            .iter()
            .zip(self.re.ys().iter().zip(self.im.ys()))
            .map(|(&t, (&re, &im))| (t, Complex64::new(re, im)))
    }

    fn eval(&self, t: f64) -> Complex64 {
        match (self.re.eval(t), self.im.eval(t)) {
            (Some(re), Some(im)) => Complex64::new(re, im),
            _ => Complex64::new(0.0, 0.0),
        }
    }

    fn range(&self) -> (f64, f64) {
        let ts = self.times();
        (ts[0], ts[ts.len() - 1])
    }

    /// Integral of one component over `[t0, t1]`, exact per knot interval.
    fn part_integral(
        &self,
        part: &MonotoneCubic,
        t0: f64,
        t1: f64,
        quad: &Quadrature,
    ) -> Result<f64> {
        let ts = self.times();
        let (lo, hi) = (t0.max(ts[0]), t1.min(ts[ts.len() - 1]));
        if lo >= hi {
            return Ok(0.0);
        }
        let first = ts.partition_point(|&x| x <= lo).saturating_sub(1);
        let mut acc = 0.0;
        for i in first..ts.len() - 1 {
            let (a, b) = (ts[i], ts[i + 1]);
            if a >= hi {
                break;
            }
            if a >= lo && b <= hi {
                acc += part.interval_integral(i);
            } else {
                let (a, b) = (a.max(lo), b.min(hi));
                acc += quad.integrate(|t| part.eval(t).unwrap_or(0.0), a, b)?;
            }
        }
        Ok(acc)
    }
}

/// A complex Rabi-frequency envelope (inverse time units).
#[derive(Clone, Debug, PartialEq)]
pub struct PulseEnvelope {
    family: Family,
    amplitude: Complex64,
    width: f64,
    phase: f64,
    table: Option<Arc<Table>>,
}

impl PulseEnvelope {
    pub fn zero() -> Self {
        PulseEnvelope {
            family: Family::Zero,
            amplitude: Complex64::new(0.0, 0.0),
            width: 1.0,
            phase: 0.0,
            table: None,
        }
    }

    /// A parametric envelope. Use [`PulseEnvelope::tabulated`] for sampled
    /// data.
    pub fn parametric(family: Family, amplitude: impl Into<Complex64>, width: f64) -> Result<Self> {
        let amplitude = amplitude.into();
        match family {
            Family::Tabulated => {
                return Err(Error::InvalidPulse(
                    "tabulated envelopes are built from samples".into(),
                ))
            }
            Family::Zero => return Ok(Self::zero()),
            _ => {}
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidPulse(format!(
                "width must be positive, got {width}"
            )));
        }
        if !(amplitude.re.is_finite() && amplitude.im.is_finite()) {
            return Err(Error::InvalidPulse("amplitude must be finite".into()));
        }
        Ok(PulseEnvelope {
            family,
            amplitude,
            width,
            phase: 0.0,
            table: None,
        })
    }

    pub fn ramped_sin(amplitude: impl Into<Complex64>, width: f64) -> Result<Self> {
        Self::parametric(Family::RampedSin, amplitude, width)
    }

    pub fn ramped_cos(amplitude: impl Into<Complex64>, width: f64) -> Result<Self> {
        Self::parametric(Family::RampedCos, amplitude, width)
    }

    pub fn sech(amplitude: impl Into<Complex64>, width: f64) -> Result<Self> {
        Self::parametric(Family::Sech, amplitude, width)
    }

    pub fn gaussian(amplitude: impl Into<Complex64>, width: f64) -> Result<Self> {
        Self::parametric(Family::Gaussian, amplitude, width)
    }

    pub fn sech_squared(amplitude: impl Into<Complex64>, width: f64) -> Result<Self> {
        Self::parametric(Family::SechSquared, amplitude, width)
    }

    pub fn tabulated(samples: &[(f64, Complex64)]) -> Result<Self> {
        Ok(PulseEnvelope {
            family: Family::Tabulated,
            amplitude: Complex64::new(1.0, 0.0),
            width: 1.0,
            phase: 0.0,
            table: Some(Arc::new(Table::new(samples)?)),
        })
    }

    /// Real-valued tabulated envelope from parallel time/value slices.
    pub fn tabulated_real(times: &[f64], values: &[f64]) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidPulse(
                "times and values differ in length".into(),
            ));
        }
        let samples: Vec<_> = times
            .iter()
            .zip(values)
            .map(|(&t, &v)| (t, Complex64::new(v, 0.0)))
            .collect();
        Self::tabulated(&samples)
    }

    /// Samples any envelope on `grid` into a tabulated one.
    pub fn tabulate(&self, grid: &[f64]) -> Result<Self> {
        let samples: Vec<_> = grid.iter().map(|&t| (t, self.eval(t))).collect();
        Self::tabulated(&samples)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    /// Multiplies the amplitude by a real factor.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.amplitude *= factor;
        out
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn amplitude(&self) -> Complex64 {
        self.amplitude
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn table(&self) -> Option<&Table> {
        self.table.as_deref()
    }

    pub fn is_zero(&self) -> bool {
        self.family == Family::Zero
    }

    fn coefficient(&self) -> Complex64 {
        self.amplitude * Complex64::from_polar(1.0, self.phase)
    }

    fn ramp_arg(&self, t: f64) -> f64 {
        0.5 * (t / self.width).atan() + FRAC_PI_4
    }

    fn shape(&self, t: f64) -> f64 {
        let x = t / self.width;
        match self.family {
            Family::Zero | Family::Tabulated => 0.0,
            Family::RampedSin => self.ramp_arg(t).sin(),
            Family::RampedCos => self.ramp_arg(t).cos(),
            Family::Sech => sech(x),
            Family::Gaussian => (-x * x).exp(),
            Family::SechSquared => sech(x).powi(2),
        }
    }

    /// Envelope value at time `t`.
    pub fn eval(&self, t: f64) -> Complex64 {
        match self.family {
            Family::Zero => Complex64::new(0.0, 0.0),
            Family::Tabulated => {
                let table = self
                    .table
                    .as_ref()
                    .expect("tabulated envelope carries samples");
                self.coefficient() * table.eval(t)
            }
            _ => self.coefficient() * self.shape(t),
        }
    }

    /// Closed-form time derivative, available for every parametric family.
    pub fn derivative(&self, t: f64) -> Option<Complex64> {
        let x = t / self.width;
        let w = self.width;
        let d = match self.family {
            Family::Zero => 0.0,
            Family::Tabulated => return None,
            Family::RampedSin => self.ramp_arg(t).cos() * 0.5 / (w * (1.0 + x * x)),
            Family::RampedCos => -self.ramp_arg(t).sin() * 0.5 / (w * (1.0 + x * x)),
            Family::Sech => -sech(x) * x.tanh() / w,
            Family::Gaussian => -2.0 * x / w * (-x * x).exp(),
            Family::SechSquared => -2.0 * sech(x).powi(2) * x.tanh() / w,
        };
        Some(self.coefficient() * d)
    }

    /// True when the envelope takes only real values.
    pub fn is_real(&self) -> bool {
        self.values_satisfy(|v| v.im.abs() <= REAL_TOL * v.norm())
    }

    /// True when the envelope takes only purely imaginary values.
    pub fn is_imaginary(&self) -> bool {
        self.values_satisfy(|v| v.re.abs() <= REAL_TOL * v.norm())
    }

    fn values_satisfy(&self, pred: impl Fn(Complex64) -> bool) -> bool {
        match self.family {
            Family::Zero => true,
            Family::Tabulated => {
                let c = self.coefficient();
                let table = self
                    .table
                    .as_ref()
                    .expect("tabulated envelope carries samples");
                table.samples().all(|(_, v)| pred(c * v))
            }
            _ => pred(self.coefficient()),
        }
    }

    /// Real part of the envelope, for envelopes already known to be real.
    pub fn eval_real(&self, t: f64) -> f64 {
        self.eval(t).re
    }

    /// Time range outside which the envelope magnitude stays below
    /// `rel * peak`. `None` for envelopes that never decay (ramps) or vanish.
    pub fn decay_window(&self, rel: f64) -> Option<(f64, f64)> {
        let w = self.width;
        let half = match self.family {
            Family::Zero | Family::RampedSin | Family::RampedCos => return None,
            Family::Tabulated => return self.table.as_ref().map(|t| t.range()),
            Family::Sech => w * (1.0 / rel).acosh(),
            Family::Gaussian => w * (1.0 / rel).ln().sqrt(),
            Family::SechSquared => w * (1.0 / rel.sqrt()).acosh(),
        };
        Some((-half, half))
    }

    /// Integral of the envelope over `[t0, t1]`.
    pub fn area(&self, t0: f64, t1: f64, quad: &Quadrature) -> Result<f64> {
        if t1 < t0 {
            return Err(Error::InvalidGrid(format!(
                "area interval [{t0}, {t1}] is reversed"
            )));
        }
        if !self.is_real() {
            return Err(Error::ComplexPulse { t0, t1 });
        }
        match self.family {
            Family::Zero => Ok(0.0),
            Family::Tabulated => {
                let table = self
                    .table
                    .as_ref()
                    .expect("tabulated envelope carries samples");
                let c = self.coefficient();
                let mut area = c.re * table.part_integral(&table.re, t0, t1, quad)?;
                if c.im != 0.0 {
                    area -= c.im * table.part_integral(&table.im, t0, t1, quad)?;
                }
                Ok(area)
            }
            _ => {
                let c = self.coefficient().re;
                Ok(c * quad.integrate(|t| self.shape(t), t0, t1)?)
            }
        }
    }

    /// Integral over the whole real line (tabulated envelopes: their range).
    pub fn total_area(&self, quad: &Quadrature) -> Result<f64> {
        if !self.is_real() {
            return Err(Error::ComplexPulse {
                t0: f64::NEG_INFINITY,
                t1: f64::INFINITY,
            });
        }
        match self.family {
            Family::Zero => Ok(0.0),
            Family::Tabulated => {
                let (a, b) = self.table.as_ref().expect("tabulated").range();
                self.area(a, b, quad)
            }
            Family::RampedSin | Family::RampedCos => Err(Error::DomainViolation(
                "ramped envelopes have unbounded area".into(),
            )),
            _ => {
                let c = self.coefficient().re;
                Ok(c * quad::integrate_real_line(|t| self.shape(t), quad.abs_tol)?)
            }
        }
    }

    /// Writes the samples of a tabulated envelope as `t,re,im` CSV. Each
    /// entry of `comments` becomes a leading `# ` line.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let table = self.table.as_ref().ok_or_else(|| {
            Error::InvalidPulse(format!("{} envelope has no samples", self.family))
        })?;
        let c = self.coefficient();
        let mut out = out;
        for line in comments {
            writeln!(out, "# {line}").map_err(|e| Error::io("<csv>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "re", "im"])?;
        for (t, v) in table.samples() {
            let v = c * v;
            w.write_record(&[fmt_f64(t), fmt_f64(v.re), fmt_f64(v.im)])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, comments: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), comments)
    }

    /// Reads a `t,re,im` CSV (lines starting with `#` are ignored).
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = reader.headers()?.clone();
        let expected = ["t", "re", "im"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::InvalidPulse(format!(
                "expected header `t,re,im`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidPulse(format!("bad number `{}`: {e}", &record[i])))
            };
            samples.push((parse(0)?, Complex64::new(parse(1)?, parse(2)?)));
        }
        Self::tabulated(&samples)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation keeps CSV output bit-exact
    format!("{v:?}")
}

fn sech(x: f64) -> f64 {
    let ax = x.abs();
    if ax > 700.0 {
        0.0
    } else {
        // 2 e^{-|x|} / (1 + e^{-2|x|}) avoids overflow of cosh
        let e = (-ax).exp();
        2.0 * e / (1.0 + e * e)
    }
}

/// Pump, Stokes and detuning envelopes of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseSet {
    pub pump: PulseEnvelope,
    pub stokes: PulseEnvelope,
    pub detuning: PulseEnvelope,
}

impl PulseSet {
    /// Builds a pulse set; pump and Stokes must be real (their phases are
    /// absorbed into the bare states).
    pub fn new(
        pump: PulseEnvelope,
        stokes: PulseEnvelope,
        detuning: PulseEnvelope,
    ) -> Result<Self> {
        for (name, p) in [("pump", &pump), ("stokes", &stokes)] {
            if !p.is_real() {
                return Err(Error::InvalidPulse(format!("{name} envelope must be real")));
            }
        }
        Ok(PulseSet {
            pump,
            stokes,
            detuning,
        })
    }

    pub fn without_detuning(pump: PulseEnvelope, stokes: PulseEnvelope) -> Result<Self> {
        Self::new(pump, stokes, PulseEnvelope::zero())
    }

    pub fn with_detuning(&self, detuning: PulseEnvelope) -> Self {
        PulseSet {
            detuning,
            ..self.clone()
        }
    }

    pub fn has_detuning(&self) -> bool {
        !self.detuning.is_zero()
    }

    /// Window outside which every envelope is below `rel` of its peak, if
    /// all envelopes decay.
    pub fn decay_window(&self, rel: f64) -> Option<(f64, f64)> {
        let mut window: Option<(f64, f64)> = None;
        for p in [&self.pump, &self.stokes, &self.detuning] {
            if p.is_zero() {
                continue;
            }
            let (a, b) = p.decay_window(rel)?;
            window = Some(match window {
                None => (a, b),
                Some((lo, hi)) => (lo.min(a), hi.max(b)),
            });
        }
        window
    }
}

/// Average total Rabi frequency `(1/T) * integral sqrt(P^2 + S^2)` over
/// `window`.
pub fn effective_rabi(
    pump: &PulseEnvelope,
    stokes: &PulseEnvelope,
    window: (f64, f64),
    averaging_time: f64,
    quad: &Quadrature,
) -> Result<f64> {
    if !(averaging_time > 0.0) {
        return Err(Error::NonpositiveWindow(averaging_time));
    }
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::NonpositiveWindow(t1 - t0));
    }
    for p in [pump, stokes] {
        if !p.is_real() {
            return Err(Error::ComplexPulse { t0, t1 });
        }
    }
    let f = |t: f64| pump.eval_real(t).hypot(stokes.eval_real(t));
    // split at tabulated knots so the integrand is smooth on each piece
    let mut breaks = vec![t0, t1];
    for p in [pump, stokes] {
        if let Some(table) = p.table() {
            breaks.extend(table.times().iter().copied().filter(|&t| t > t0 && t < t1));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += quad.integrate(f, w[0], w[1])?;
    }
    Ok(total / averaging_time)
}
