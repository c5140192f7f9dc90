//! Adaptive Gauss-Kronrod (7, 15) quadrature.
//!
//! Global subdivision in the style of QUADPACK's QAG: the interval with the
//! largest error estimate is bisected until the summed estimate drops below
//! the requested absolute tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Default absolute tolerance used for pulse areas and cumulative integrals.
pub const DEFAULT_ABS_TOL: f64 = 1e-10;

const MAX_SUBDIVISIONS: usize = 4000;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Quadrature settings carried by configs instead of being hard-coded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub abs_tol: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature {
            abs_tol: DEFAULT_ABS_TOL,
        }
    }
}

impl Quadrature {
    pub fn new(abs_tol: f64) -> Self {
        Quadrature { abs_tol }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64> {
        integrate(f, a, b, self.abs_tol)
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 15-point Kronrod evaluation with its embedded 7-point Gauss estimate.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_sum = fc.abs() * WGK[7];
    let mut fv = [(0.0, 0.0); 7];
    for (j, &x) in XGK[..7].iter().enumerate() {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv[j] = (f1, f2);
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[7] * (fc - mean).abs();
    for (j, (f1, f2)) in fv.iter().enumerate() {
        asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let value = kronrod * half;
    let abs_value = abs_sum * half.abs();
    let asc = asc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if asc != 0.0 && error != 0.0 {
        error = asc * (200.0 * error / asc).powf(1.5).min(1.0);
    }
    let roundoff = 50.0 * f64::EPSILON * abs_value;
    if abs_value > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(roundoff);
    }
    Segment { a, b, value, error }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `abs_tol`.
///
/// `b < a` gives the negated integral. A non-finite integrand value or a
/// failure to converge within the subdivision budget is reported as
/// [`Error::QuadratureFailed`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, abs_tol).map(|v| -v);
    }
    let first = gk15(&f, a, b);
    let mut total = first.value;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut splits = 0;
    while total_err > abs_tol {
        // Roundoff floor: further bisection cannot help.
        if total_err <= 100.0 * f64::EPSILON * total.abs() {
            break;
        }
        if splits >= MAX_SUBDIVISIONS || !total.is_finite() {
            return Err(Error::QuadratureFailed {
                a,
                b,
                error: total_err,
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            return Err(Error::QuadratureFailed {
                a,
                b,
                error: total_err,
            });
        }
        let left = gk15(&f, worst.a, mid);
        let right = gk15(&f, mid, worst.b);
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        splits += 1;
        // Re-sum periodically so accumulated cancellation cannot drift.
        if splits % 64 == 0 {
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    if !total.is_finite() {
        return Err(Error::QuadratureFailed {
            a,
            b,
            error: total_err,
        });
    }
    Ok(heap.iter().map(|s| s.value).sum())
}

/// Integrates over the whole real line through `t = x / (1 - x^2)`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, abs_tol: f64) -> Result<f64> {
    integrate(
        |x| {
            let d = 1.0 - x * x;
            if d <= 0.0 {
                return 0.0;
            }
            let t = x / d;
            let jac = (1.0 + x * x) / (d * d);
            let v = f(t) * jac;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        -1.0,
        1.0,
        abs_tol,
    )
}

/// Running integral of `f` from `grid[0]` to each grid node.
pub fn cumulative<F: Fn(f64) -> f64>(f: F, grid: &[f64], abs_tol: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    if !grid.is_empty() {
        out.push(0.0);
    }
    for w in grid.windows(2) {
        acc += integrate(&f, w[0], w[1], abs_tol)?;
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| 3.0 * x * x - 2.0 * x + 1.0, -1.0, 2.0, 1e-12).unwrap();
        assert!((v - 9.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_area() {
        let v = integrate(|t| PI.sqrt() * (-t * t).exp(), -8.0, 8.0, 1e-10).unwrap();
        assert!((v - PI).abs() < 1e-10);
    }

    #[test]
    fn reversed_limits_negate() {
        let a = integrate(f64::sin, 0.0, 1.0, 1e-12).unwrap();
        let b = integrate(f64::sin, 1.0, 0.0, 1e-12).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn peaked_integrand_is_resolved() {
        // Lorentzian of width 1e-3 on a wide interval.
        let w = 1e-3;
        let v = integrate(|t| w / (t * t + w * w), -10.0, 10.0, 1e-10).unwrap();
        let exact = 2.0 * (10.0f64 / w).atan();
        assert!((v - exact).abs() < 1e-9, "{v} vs {exact}");
    }

    #[test]
    fn real_line_lorentzian() {
        let v = integrate_real_line(|t| 0.1 / (t * t + 0.01), 1e-12).unwrap();
        assert!((v - PI).abs() < 1e-10, "{v}");
    }

    #[test]
    fn cumulative_matches_antiderivative() {
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
        let c = cumulative(f64::cos, &grid, 1e-12).unwrap();
        for (t, v) in grid.iter().zip(&c) {
            assert!((v - t.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_integrand_fails() {
        assert!(integrate(|x| 1.0 / x, 0.0, 1.0, 1e-10).is_err());
    }
}
