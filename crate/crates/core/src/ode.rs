//! Dormand-Prince 8(5,3) integrator for three complex amplitudes.
//!
//! Steps are clipped so the integrator lands exactly on every requested
//! output time; the step-size controller itself is not disturbed by the
//! clipping. No projection or renormalization is applied.

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type State = Vector3<Complex64>;

const C: [f64; 12] = [
    0.0,
    0.05260015195876773,
    0.0789002279381516,
    0.1183503419072274,
    0.2816496580927726,
    0.3333333333333333,
    0.25,
    0.3076923076923077,
    0.6512820512820513,
    0.6,
    0.8571428571428571,
    1.0,
];

// Lower-triangular stage coefficients as (stage, weight) pairs.
const A: [&[(usize, f64)]; 11] = [
    &[(0, 0.05260015195876773)],
    &[(0, 0.0197250569845379), (1, 0.0591751709536137)],
    &[(0, 0.02958758547680685), (2, 0.08876275643042054)],
    &[
        (0, 0.2413651341592667),
        (2, -0.8845494793282861),
        (3, 0.924834003261792),
    ],
    &[
        (0, 0.037037037037037035),
        (3, 0.17082860872947386),
        (4, 0.12546768756682242),
    ],
    &[
        (0, 0.037109375),
        (3, 0.17025221101954405),
        (4, 0.06021653898045596),
        (5, -0.017578125),
    ],
    &[
        (0, 0.03709200011850479),
        (3, 0.17038392571223998),
        (4, 0.10726203044637328),
        (5, -0.015319437748624402),
        (6, 0.008273789163814023),
    ],
    &[
        (0, 0.6241109587160757),
        (3, -3.3608926294469414),
        (4, -0.868219346841726),
        (5, 27.59209969944671),
        (6, 20.154067550477894),
        (7, -43.48988418106996),
    ],
    &[
        (0, 0.47766253643826434),
        (3, -2.4881146199716677),
        (4, -0.590290826836843),
        (5, 21.230051448181193),
        (6, 15.279233632882423),
        (7, -33.28821096898486),
        (8, -0.020331201708508627),
    ],
    &[
        (0, -0.9371424300859873),
        (3, 5.186372428844064),
        (4, 1.0914373489967295),
        (5, -8.149787010746927),
        (6, -18.52006565999696),
        (7, 22.739487099350505),
        (8, 2.4936055526796523),
        (9, -3.0467644718982196),
    ],
    &[
        (0, 2.273310147516538),
        (3, -10.53449546673725),
        (4, -2.0008720582248625),
        (5, -17.9589318631188),
        (6, 27.94888452941996),
        (7, -2.8589982771350235),
        (8, -8.87285693353063),
        (9, 12.360567175794303),
        (10, 0.6433927460157636),
    ],
];

const B: [(usize, f64); 8] = [
    (0, 0.054293734116568765),
    (5, 4.450312892752409),
    (6, 1.8915178993145003),
    (7, -5.801203960010585),
    (8, 0.3111643669578199),
    (9, -0.1521609496625161),
    (10, 0.20136540080403034),
    (11, 0.04471061572777259),
];

// Third-order embedded weights; the last applies to the first stage of the next step.
const BHH: [f64; 3] = [0.2440944881889764, 0.7338466882816118, 0.022058823529411766];

const ER: [(usize, f64); 8] = [
    (0, 0.01312004499419488),
    (5, -1.2251564463762044),
    (6, -0.4957589496572502),
    (7, 1.6643771824549864),
    (8, -0.35032884874997366),
    (9, 0.3341791187130175),
    (10, 0.08192320648511571),
    (11, -0.022355307863886294),
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.333;
const MAX_FACTOR: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    /// Local error tolerance, used as both absolute and relative bound.
    pub tol: f64,
    pub max_steps: usize,
}

impl StepControl {
    pub fn new(tol: f64) -> Self {
        StepControl {
            tol,
            max_steps: 50_000_000,
        }
    }
}

/// Integration statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

fn max_abs(v: &State) -> f64 {
    v.iter().fold(0.0, |m, c| m.max(c.norm()))
}

/// `y + h * sum(a_i * k_i)`
fn combine(y: &State, h: f64, k: &[State], terms: &[(usize, f64)]) -> State {
    let mut acc = State::zeros();
    for &(j, a) in terms {
        for i in 0..3 {
            acc[i] += k[j][i] * a;
        }
    }
    let mut out = *y;
    for i in 0..3 {
        out[i] += acc[i] * h;
    }
    out
}

fn is_finite(v: &State) -> bool {
    v.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

/// Integrates `dy/dt = f(t, y)` from `times[0]` through every entry of
/// `times` (monotone, either direction) and returns the state at each.
pub fn integrate<F>(
    f: F,
    y0: State,
    times: &[f64],
    control: StepControl,
) -> Result<(Vec<State>, Stats)>
where
    F: Fn(f64, &State) -> State,
{
    let mut stats = Stats::default();
    let mut out = Vec::with_capacity(times.len());
    if times.is_empty() {
        return Ok((out, stats));
    }
    if !is_finite(&y0) {
        return Err(Error::NonFiniteState { t: times[0] });
    }
    let tol = control.tol;
    if !(tol > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let span = times[times.len() - 1] - times[0];
    let dir = if span < 0.0 { -1.0 } else { 1.0 };
    if times.windows(2).any(|w| (w[1] - w[0]) * dir <= 0.0) {
        return Err(Error::InvalidGrid(
            "output times must be strictly monotone".into(),
        ));
    }

    let mut t = times[0];
    let mut y = y0;
    out.push(y);
    let mut k = [State::zeros(); 12];
    k[0] = f(t, &y);
    stats.evaluations += 1;

    // initial step from the scale of the solution and its derivative
    let d0 = max_abs(&y).max(1e-5);
    let d1 = max_abs(&k[0]).max(1e-5);
    let mut h = (0.01 * d0 / d1)
        .min(span.abs())
        .max(1e-12 * span.abs().max(1.0));
    let mut reject_last = false;

    for &target in &times[1..] {
        while (target - t) * dir > 0.0 {
            if stats.accepted + stats.rejected >= control.max_steps {
                return Err(Error::StepSizeUnderflow { t });
            }
            let remaining = (target - t).abs();
            let clipped = h >= remaining;
            let step = if clipped { remaining } else { h };
            let hs = dir * step;

            for s in 1..12 {
                let ys = combine(&y, hs, &k, A[s - 1]);
                k[s] = f(t + C[s] * hs, &ys);
            }
            let y_new = combine(&y, hs, &k, &B);
            let t_new = if clipped { target } else { t + hs };
            stats.evaluations += 11;

            // fifth- and third-order error estimates, blended as in DOP853
            let mut err5 = 0.0;
            let mut err3 = 0.0;
            for i in 0..3 {
                let scale = tol * (1.0 + y[i].norm().max(y_new[i].norm()));
                let mut bsum = Complex64::new(0.0, 0.0);
                for &(j, b) in &B {
                    bsum += k[j][i] * b;
                }
                let e3 = bsum - k[0][i] * BHH[0] - k[8][i] * BHH[1] - k[11][i] * BHH[2];
                let mut e5 = Complex64::new(0.0, 0.0);
                for &(j, e) in &ER {
                    e5 += k[j][i] * e;
                }
                err3 += (e3.norm() / scale).powi(2);
                err5 += (e5.norm() / scale).powi(2);
            }
            let mut deno = err5 + 0.01 * err3;
            if deno <= 0.0 {
                deno = 1.0;
            }
            let mut err = step * err5 / (3.0 * deno).sqrt();
            if !err.is_finite() {
                if !is_finite(&y_new) {
                    return Err(Error::NonFiniteState { t: t_new });
                }
                err = f64::MAX;
            }

            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.125)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if err <= 1.0 {
                stats.accepted += 1;
                t = t_new;
                y = y_new;
                k[0] = f(t, &y);
                stats.evaluations += 1;
                if !is_finite(&k[0]) {
                    return Err(Error::NonFiniteState { t });
                }
                let grown = if reject_last {
                    step.min(step * factor)
                } else {
                    step * factor
                };
                // a clipped step says nothing about how large the next may be
                h = if clipped { h.max(grown) } else { grown };
                reject_last = false;
            } else {
                stats.rejected += 1;
                h = step * factor;
                reject_last = true;
                if h <= 1e-14 * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t });
                }
            }
        }
        if !is_finite(&y) {
            return Err(Error::NonFiniteState { t });
        }
        out.push(y);
    }
    Ok((out, stats))
}
