//! One-dimensional interpolants over tabulated data.

use serde::{Deserialize, Serialize};

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
///
/// On every interval the interpolant stays between the two bracketing
/// samples, so non-negative data never produces negative values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Samples", into = "Samples")]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Samples {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl From<Pchip> for Samples {
    fn from(p: Pchip) -> Self {
        Samples { x: p.x, y: p.y }
    }
}

impl TryFrom<Samples> for Pchip {
    type Error = String;
    fn try_from(s: Samples) -> Result<Self, String> {
        Pchip::new(s.x, s.y)
    }
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, String> {
        if x.len() != y.len() {
            return Err(format!("abscissa has {} samples, ordinate {}", x.len(), y.len()));
        }
        if x.len() < 2 {
            return Err("at least two samples are required".into());
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err("samples must be finite".into());
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err("abscissa must be strictly increasing".into());
        }
        let slopes = fritsch_carlson_slopes(&x, &y);
        Ok(Pchip { x, y, slopes })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    /// Evaluates the interpolant; `None` outside the tabulated domain.
    pub fn eval(&self, t: f64) -> Option<f64> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&t) {
            return None;
        }
        let k = match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            n if n >= self.x.len() => self.x.len() - 2,
            n => n - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Some(
            h00 * self.y[k]
                + h10 * h * self.slopes[k]
                + h01 * self.y[k + 1]
                + h11 * h * self.slopes[k + 1],
        )
    }
}

fn fritsch_carlson_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] <= 0.0 {
            d[k] = 0.0;
        } else {
            // weighted harmonic mean
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Piecewise-linear interpolation over sorted `(x, y)` pairs, clamped to the
/// end values outside the table.
pub fn linear_clamped(x: &[f64], y: &[f64], t: f64) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if t <= x[0] {
        return y[0];
    }
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let k = x.partition_point(|&xi| xi <= t) - 1;
    let s = (t - x[k]) / (x[k + 1] - x[k]);
    y[k] + s * (y[k + 1] - y[k])
}
