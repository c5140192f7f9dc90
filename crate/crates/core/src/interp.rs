//! Shape-preserving cubic Hermite interpolation.
//!
//! Node slopes come from the three-point parabola through each node and its
//! neighbours, then pass through Hyman's monotonicity filter: a slope is
//! clipped to three times the smaller adjacent secant and zeroed at discrete
//! extrema. The interpolant therefore never overshoots the data, and on
//! smooth monotone stretches it keeps third-order accuracy.

/// A monotone piecewise-cubic interpolant of real samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// Builds the interpolant. `xs` must be strictly increasing and have the
    /// same length as `ys`; callers validate this.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        debug_assert_eq!(xs.len(), ys.len());
        let slopes = hyman_slopes(&xs, &ys);
        MonotoneCubic { xs, ys, slopes }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Evaluates the interpolant, returning `None` outside the sample range.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let n = self.xs.len();
        if n == 0 || x < self.xs[0] || x > self.xs[n - 1] || x.is_nan() {
            return None;
        }
        if n == 1 {
            return Some(self.ys[0]);
        }
        let i = match self.xs.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => return Some(self.ys[i]),
            Err(i) => i - 1,
        };
        Some(self.eval_in(i, x))
    }

    fn eval_in(&self, i: usize, x: f64) -> f64 {
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.ys[i]
            + h * h10 * self.slopes[i]
            + h01 * self.ys[i + 1]
            + h * h11 * self.slopes[i + 1]
    }

    /// Exact integral of the interpolant over one knot interval.
    pub fn interval_integral(&self, i: usize) -> f64 {
        let h = self.xs[i + 1] - self.xs[i];
        0.5 * h * (self.ys[i] + self.ys[i + 1])
            + h * h * (self.slopes[i] - self.slopes[i + 1]) / 12.0
    }
}

fn hyman_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = ys
        .windows(2)
        .zip(&h)
        .map(|(w, h)| (w[1] - w[0]) / h)
        .collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        // derivative of the parabola through (i-1, i, i+1)
        d[i] = (h[i] * delta[i - 1] + h[i - 1] * delta[i]) / (h[i - 1] + h[i]);
    }
    // one-sided parabolic end slopes
    d[0] = ((2.0 * h[0] + h[1]) * delta[0] - h[0] * delta[1]) / (h[0] + h[1]);
    let m = n - 1;
    d[m] = ((2.0 * h[m - 1] + h[m - 2]) * delta[m - 1] - h[m - 1] * delta[m - 2])
        / (h[m - 1] + h[m - 2]);

    let limit = |d: f64, a: f64, b: f64| -> f64 {
        if a * b <= 0.0 || d * a <= 0.0 {
            0.0
        } else {
            d.signum() * d.abs().min(3.0 * a.abs().min(b.abs()))
        }
    };
    for i in 1..n - 1 {
        d[i] = limit(d[i], delta[i - 1], delta[i]);
    }
    // end slopes: keep sign of the adjacent secant and the same bound
    d[0] = limit(d[0], delta[0], delta[0]);
    d[m] = limit(d[m], delta[m - 1], delta[m - 1]);
    d
}
