//! Numerical GN integration over the actual power profiles.
//!
//! The spectrum is split into regions `(a, b, c)`: `f1` in channel `a`,
//! `f2` in channel `b` and `f3 = f1 + f2 − f` in channel `c`. Within a region
//! every frequency sees its channel's power profile, so the span kernel
//! `K = ∫ √(ρ_a ρ_b ρ_c / ρ_i) e^{jφz} dz` depends on `(f1, f2)` only through
//! `φ = 4π² β2 (f1 − f)(f2 − f)`. The z-integral treats the amplitude as
//! exponential between grid points and integrates each piece exactly, which
//! stays accurate however fast `e^{jφz}` oscillates.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::closed_form::{check_link, distinct_spans, span_coefficients};
use super::{NliError, NliMethod, NliResult, GN_PREFACTOR};
use crate::fiber::FiberSpec;
use crate::propagation::{LinkProfiles, PowerProfile};
use crate::quadrature::{integrate, QuadError, Tolerance};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Relative accuracy target per channel.
    pub rel_tol: f64,
    /// Panel limit for each one-dimensional adaptive integral.
    pub max_intervals: usize,
    /// Length of the exponential pieces in the z-integral, km. Rounded to
    /// a whole number of solver steps.
    pub z_segment_km: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { rel_tol: 1e-3, max_intervals: 1000, z_segment_km: 0.5 }
    }
}

/// Log-amplitude samples of one span on the coarse z grid.
struct SpanGrid {
    dz: f64,
    /// `ln ρ` per channel at each coarse sample.
    ln_rho: Vec<Vec<f64>>,
}

impl SpanGrid {
    fn new(profile: &PowerProfile, segment_km: f64) -> Self {
        let steps = profile.z_km.len() - 1;
        let h = profile.length_km() / steps as f64;
        let mut stride = ((segment_km / h).round() as usize).max(1);
        while !steps.is_multiple_of(stride) {
            stride -= 1;
        }
        let ln_rho = (0..profile.channel_count)
            .map(|i| {
                let p = profile.channel(i);
                let p0 = p[0];
                (0..=steps).step_by(stride).map(|k| (p[k] / p0).ln()).collect()
            })
            .collect();
        SpanGrid { dz: h * stride as f64, ln_rho }
    }
}

/// Piecewise-exponential amplitude of one region.
struct Amplitude {
    a: Vec<f64>,
    /// Log-slope on each piece, 1/km.
    s: Vec<f64>,
    dz: f64,
}

impl Amplitude {
    fn new(grid: &SpanGrid, a: usize, b: usize, c: usize, i: usize) -> Self {
        let r = &grid.ln_rho;
        let ln_amp: Vec<f64> = (0..r[a].len()).map(|k| 0.5 * (r[a][k] + r[b][k] + r[c][k] - r[i][k])).collect();
        let s = ln_amp.windows(2).map(|w| (w[1] - w[0]) / grid.dz).collect();
        Amplitude { a: ln_amp.iter().map(|v| v.exp()).collect(), s, dz: grid.dz }
    }

    /// `|∫ A(z) e^{jφz} dz|²`, km².
    fn kernel_sq(&self, phi: f64) -> f64 {
        let dz = self.dz;
        let rot = Complex64::from_polar(1.0, phi * dz);
        let mut w = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for k in 0..self.s.len() {
            let u = Complex64::new(self.s[k] * dz, phi * dz);
            let w_next = w * rot;
            let term = if u.norm_sqr() < 1e-6 {
                // (e^u − 1)/u to third order
                w * self.a[k] * dz * (1.0 + u * (0.5 + u / 6.0))
            } else {
                (w_next * self.a[k + 1] - w * self.a[k]) / Complex64::new(self.s[k], phi)
            };
            sum += term;
            w = w_next;
        }
        sum.norm_sqr()
    }
}

struct Channel {
    lo: f64,
    hi: f64,
    psd: f64,
    f_thz: f64,
}

/// SCI and XCI powers (W) of one channel from one span.
fn channel_span_nli(
    fiber: &FiberSpec,
    grid: &SpanGrid,
    chans: &[Channel],
    i: usize,
    hint_w: f64,
    opt: &OracleOptions,
) -> Result<(f64, f64), QuadError> {
    let f0 = chans[i].f_thz;
    let b_i = chans[i].hi - chans[i].lo;
    let n = chans.len();
    let beta2 = |x: f64, y: f64| fiber.dispersion_beta2(f0 + 0.5 * (x + y) * 1e-3).unwrap_or(0.0);

    let mut regions = Vec::new();
    for a in 0..n {
        for b in a..n {
            let (lo, hi) = (chans[a].lo + chans[b].lo, chans[a].hi + chans[b].hi);
            for (c, ch) in chans.iter().enumerate() {
                if ch.lo < hi && ch.hi > lo {
                    regions.push((a, b, c));
                }
            }
        }
    }
    let budget = 0.3 * opt.rel_tol * hint_w / regions.len().max(1) as f64;

    let (mut sci, mut xci) = (0.0, 0.0);
    for (a, b, c) in regions {
        let (ca, cb, cc) = (&chans[a], &chans[b], &chans[c]);
        let g3 = ca.psd * cb.psd * cc.psd;
        if g3 == 0.0 {
            continue;
        }
        let far = [ca.f_thz, cb.f_thz, cc.f_thz].into_iter().fold(f0, |m, f| if (f - f0).abs() > (m - f0).abs() { f } else { m });
        let gamma = fiber.gamma_xci(f0, far).map_err(|_| QuadError { value: 0.0, error: f64::INFINITY, intervals: 0 })?;
        let mult = if a == b { 1.0 } else { 2.0 };
        // GHz² integral -> W
        let scale = GN_PREFACTOR * b_i * gamma * gamma * g3 * mult;
        let amp = Amplitude::new(grid, a, b, c, i);

        let x_lo = ca.lo.max(cc.lo - cb.hi);
        let x_hi = ca.hi.min(cc.hi - cb.lo);
        if !(x_hi > x_lo) {
            continue;
        }
        let abs_tol = budget / scale;
        let inner_tol = Tolerance { abs: 0.1 * abs_tol / (x_hi - x_lo), rel: 0.1 * opt.rel_tol, max_intervals: opt.max_intervals };
        let failure: RefCell<Option<QuadError>> = RefCell::new(None);
        let inner = |x: f64| -> f64 {
            let y_lo = cb.lo.max(cc.lo - x);
            let y_hi = cb.hi.min(cc.hi - x);
            let f = |y: f64| amp.kernel_sq(4.0 * PI * PI * beta2(x, y) * x * y * 1e-6);
            match integrate(f, y_lo, y_hi, &[0.0], inner_tol) {
                Ok(r) => r.value,
                Err(e) => {
                    let v = e.value;
                    failure.borrow_mut().get_or_insert(e);
                    v
                }
            }
        };
        let breaks = [0.0, cc.lo - cb.lo, cc.hi - cb.hi];
        let outer = integrate(inner, x_lo, x_hi, &breaks, Tolerance { abs: abs_tol, rel: opt.rel_tol, max_intervals: opt.max_intervals })?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let p = scale * outer.value;
        if a == i && b == i && c == i {
            sci += p;
        } else {
            xci += p;
        }
    }
    Ok((sci, xci))
}

/// Numerically integrated NLI for the selected channels.
pub fn nli_oracle(scenario: &Scenario, link: &LinkProfiles, channels: &[usize], options: &OracleOptions) -> Result<NliResult, NliError> {
    check_link(scenario, link)?;
    if channels.is_empty() {
        return Err(NliError::EmptySelection);
    }
    let n = scenario.channel_count();
    if let Some(&bad) = channels.iter().find(|&&c| c >= n) {
        return Err(NliError::BadChannel(bad));
    }
    let plan = scenario.plan();
    let launch = scenario.launch_w();
    let bw = plan.bandwidths_ghz();

    let groups = distinct_spans(link);
    let mut span_data = Vec::new();
    for &(s, count) in &groups {
        let fiber = &scenario.spans()[s].fiber;
        for c in plan.channels() {
            fiber.dispersion_beta2(c.center_thz)?;
        }
        let coeffs = span_coefficients(fiber, &link.spans[s], &bw)?;
        let (cs, cx) = coeffs.apply(&launch);
        let hint: Vec<f64> = cs.iter().zip(&cx).map(|(a, b)| a + b).collect();
        span_data.push((s, count, SpanGrid::new(&link.spans[s], options.z_segment_km), hint));
    }

    let per_channel: Vec<Result<(f64, f64), NliError>> = channels
        .par_iter()
        .map(|&i| {
            let f_i = plan.channels()[i].center_thz;
            let chans: Vec<Channel> = plan
                .channels()
                .iter()
                .zip(&launch)
                .map(|(c, &p)| {
                    let mid = (c.center_thz - f_i) * 1e3;
                    let b = c.bandwidth_ghz();
                    Channel { lo: mid - b / 2.0, hi: mid + b / 2.0, psd: p / b, f_thz: c.center_thz }
                })
                .collect();
            let (mut sci, mut xci) = (0.0, 0.0);
            for (s, count, grid, hint) in &span_data {
                if hint[i] == 0.0 {
                    continue;
                }
                let fiber = &scenario.spans()[*s].fiber;
                let (ps, px) = channel_span_nli(fiber, grid, &chans, i, hint[i], options)
                    .map_err(|source| NliError::Integration { channel: i, source })?;
                sci += *count as f64 * ps;
                xci += *count as f64 * px;
            }
            Ok((sci, xci))
        })
        .collect();

    let mut sci_w = Vec::with_capacity(channels.len());
    let mut xci_w = Vec::with_capacity(channels.len());
    for r in per_channel {
        let (s, x) = r?;
        sci_w.push(s);
        xci_w.push(x);
    }
    let freqs = plan.freqs_thz();
    Ok(NliResult {
        method: NliMethod::Oracle,
        channels: channels.to_vec(),
        freqs_thz: channels.iter().map(|&c| freqs[c]).collect(),
        p_nli_w: sci_w.iter().zip(&xci_w).map(|(a, b)| a + b).collect(),
        sci_w,
        xci_w,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lossy(alpha: f64, len: f64, steps: usize) -> Amplitude {
        let dz = len / steps as f64;
        Amplitude {
            a: (0..=steps).map(|k| (-alpha * k as f64 * dz).exp()).collect(),
            s: vec![-alpha; steps],
            dz,
        }
    }

    #[test]
    fn kernel_matches_closed_form_for_pure_loss() {
        let (alpha, len) = (0.0437, 100.0);
        let amp = lossy(alpha, len, 200);
        for phi in [0.0, 1e-3, 0.05, 3.0, 250.0] {
            let exact = {
                let s = Complex64::new(-alpha, phi);
                ((s * len).exp() - 1.0) / s
            };
            assert_relative_eq!(amp.kernel_sq(phi), exact.norm_sqr(), max_relative = 1e-9);
        }
    }
}
