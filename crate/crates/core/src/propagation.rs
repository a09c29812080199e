//! Raman/ISRS power evolution along a span for forward channels and
//! counter-propagating pumps, with distributed Raman ASE.
//!
//! Waves are ordered channels first, then pumps. Each sweep integrates one
//! direction with classical RK4 on a uniform grid while the other direction
//! is held at its previous iterate; sweeps alternate until the pump profiles
//! stop changing.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::fiber::{FiberError, FiberSpec};
use crate::scenario::{Scenario, SolverOptions, SpanSpec};
use crate::units::{db_to_linear, watt_to_dbm, BOLTZMANN, GHZ, PLANCK, THZ};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error("pump/signal relaxation did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("power became negative or non-finite near z = {z_km:.3} km; reduce z_step (currently {z_step_km} km)")]
    NegativePower { z_km: f64, z_step_km: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("channel {channel}: {reason}")]
    Fit { channel: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveDirection {
    Forward,
    Backward,
}

/// Sampled power evolution of every wave along one span.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerProfile {
    pub z_km: Vec<f64>,
    pub freqs_thz: Vec<f64>,
    pub direction: Vec<WaveDirection>,
    /// `powers_w[wave][k]` at `z_km[k]`.
    pub powers_w: Vec<Vec<f64>>,
    /// Raman ASE per channel at the fiber end (before lumped loss).
    pub raman_ase_w: Vec<f64>,
    pub channel_count: usize,
    pub bvp_iterations: usize,
    pub bvp_residual: f64,
}

impl PowerProfile {
    pub fn length_km(&self) -> f64 {
        *self.z_km.last().expect("non-empty grid")
    }

    pub fn pump_count(&self) -> usize {
        self.freqs_thz.len() - self.channel_count
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.powers_w[i]
    }

    pub fn pump(&self, p: usize) -> &[f64] {
        &self.powers_w[self.channel_count + p]
    }

    /// Channel power at the fiber end.
    pub fn channel_output_w(&self) -> Vec<f64> {
        self.powers_w[..self.channel_count].iter().map(|p| *p.last().unwrap()).collect()
    }

    /// Writes `z_km` and one dBm column per wave.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["z_km".to_string()];
        for (i, f) in self.freqs_thz.iter().enumerate() {
            if i < self.channel_count {
                header.push(format!("ch{i}_{f:.5}THz_dBm"));
            } else {
                header.push(format!("pump{}_{f:.5}THz_dBm", i - self.channel_count));
            }
        }
        w.write_record(&header)?;
        for (k, z) in self.z_km.iter().enumerate() {
            let mut row = vec![format!("{z:.6}")];
            row.extend(self.powers_w.iter().map(|p| format!("{:.6}", watt_to_dbm(p[k]))));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Single-exponential fit of a channel's power profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveAlpha {
    /// Field attenuation ᾱ, 1/km; the power decays as `exp(-2ᾱz)`.
    pub alpha_field_per_km: f64,
    /// RMS log-domain fit error.
    pub fit_residual: f64,
}

/// Least-squares fit of `ln P(z) = ln P(0) - 2ᾱz` over the whole span.
pub fn effective_alpha_fit(profile: &PowerProfile, channel: usize) -> Result<EffectiveAlpha, PropagationError> {
    if channel >= profile.channel_count {
        return Err(PropagationError::Fit { channel, reason: "not a channel index".into() });
    }
    let p = profile.channel(channel);
    if p.iter().any(|&v| !(v > 0.0)) {
        return Err(PropagationError::Fit { channel, reason: "profile has non-positive samples".into() });
    }
    let y0 = p[0].ln();
    let (mut szz, mut szy) = (0.0, 0.0);
    for (z, v) in profile.z_km.iter().zip(p) {
        szz += z * z;
        szy += z * (v.ln() - y0);
    }
    let slope = szy / szz;
    let sse: f64 = profile.z_km.iter().zip(p).map(|(z, v)| (v.ln() - y0 - slope * z).powi(2)).sum();
    Ok(EffectiveAlpha {
        alpha_field_per_km: -slope / 2.0,
        fit_residual: (sse / p.len() as f64).sqrt(),
    })
}

/// Effective length `∫ P(z)/P(0) dz` of a channel, km, integrating each
/// grid interval as an exponential.
pub fn effective_length(profile: &PowerProfile, channel: usize) -> Result<f64, PropagationError> {
    if channel >= profile.channel_count {
        return Err(PropagationError::Fit { channel, reason: "not a channel index".into() });
    }
    let p = profile.channel(channel);
    if p.iter().any(|&v| !(v > 0.0)) {
        return Err(PropagationError::Fit { channel, reason: "profile has non-positive samples".into() });
    }
    let mut sum = 0.0;
    for k in 0..p.len() - 1 {
        let dz = profile.z_km[k + 1] - profile.z_km[k];
        let r = p[k + 1] / p[k];
        let mean = if (r - 1.0).abs() < 1e-9 { 0.5 * (p[k] + p[k + 1]) } else { (p[k + 1] - p[k]) / r.ln() };
        sum += mean * dz;
    }
    Ok(sum / p[0])
}

/// Field attenuation ᾱ whose pure-loss effective length
/// `(1 − e^{−2ᾱL})/(2ᾱ)` equals `l_eff` over a span of length `length`.
/// Negative for net gain.
pub fn alpha_for_effective_length(l_eff: f64, length: f64) -> f64 {
    let leff = |a: f64| if (a * length).abs() < 1e-12 { length } else { -(-2.0 * a * length).exp_m1() / (2.0 * a) };
    // leff is decreasing in a; bracket then bisect
    let (mut lo, mut hi) = (-1.0 / length, 1.0 / length);
    while leff(lo) < l_eff {
        lo *= 2.0;
    }
    while leff(hi) > l_eff {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if leff(mid) > l_eff {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-12) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Coupling coefficient `K_ij` (1/(W·km)) in `dP_i/dz ∝ P_i Σ_j K_ij P_j`:
/// gain from higher-frequency waves, photon-number-scaled depletion towards
/// lower-frequency ones. Detunings beyond the gain table contribute nothing.
pub fn raman_coupling(fiber: &FiberSpec, f_i: f64, f_j: f64) -> Result<f64, FiberError> {
    let gain = |lo: f64, hi: f64| match fiber.raman_gain(lo, hi) {
        Err(FiberError::OutOfRange { quantity, .. }) if quantity.starts_with("raman") => Ok(0.0),
        r => r,
    };
    if f_j > f_i {
        gain(f_i, f_j)
    } else if f_j < f_i {
        Ok(-(f_i / f_j) * gain(f_j, f_i)?)
    } else {
        Ok(0.0)
    }
}

/// Phonon occupancy at detuning `df_thz` and temperature `t_k`.
pub fn phonon_occupancy(df_thz: f64, t_k: f64) -> f64 {
    1.0 / ((PLANCK * df_thz * THZ / (BOLTZMANN * t_k)).exp() - 1.0)
}

/// Inputs to [`propagate_span`] besides the span itself.
#[derive(Debug, Clone)]
pub struct SpanInputs<'a> {
    pub freqs_thz: &'a [f64],
    pub bandwidths_ghz: &'a [f64],
    pub launch_w: &'a [f64],
    pub isrs: bool,
    pub temperature_k: f64,
}

struct System {
    n: usize,
    m: usize,
    alpha: Vec<f64>,
    /// Row-major `(n + m) × (n + m)` coupling matrix.
    k: Vec<f64>,
}

impl System {
    fn kij(&self, i: usize, j: usize) -> f64 {
        self.k[i * (self.n + self.m) + j]
    }
}

fn check_positive(y: &[f64], z_km: f64, h: f64) -> Result<(), PropagationError> {
    if y.iter().all(|v| v.is_finite() && *v >= 0.0) {
        Ok(())
    } else {
        Err(PropagationError::NegativePower { z_km, z_step_km: h })
    }
}

/// Dot product with independent partial sums so the compiler can vectorise.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn geo_mid(a: f64, b: f64) -> f64 {
    (a * b).sqrt()
}

/// Solves the coupled power equations over one span. Pump powers in
/// `span.pumps` are the values injected at `z = L`.
pub fn propagate_span(span: &SpanSpec, input: &SpanInputs, options: &SolverOptions) -> Result<PowerProfile, PropagationError> {
    propagate_span_warm(span, input, options, None)
}

/// As [`propagate_span`], starting the pump relaxation from the pump
/// profiles of `guess` (rescaled to the new injected powers) instead of
/// the undepleted profile. A guess with a different grid or pump count is
/// ignored.
pub fn propagate_span_warm(
    span: &SpanSpec,
    input: &SpanInputs,
    options: &SolverOptions,
    guess: Option<&PowerProfile>,
) -> Result<PowerProfile, PropagationError> {
    let n = input.freqs_thz.len();
    if input.launch_w.len() != n || input.bandwidths_ghz.len() != n {
        return Err(PropagationError::InvalidInput("launch/bandwidth length differs from channel count".into()));
    }
    if input.launch_w.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(PropagationError::InvalidInput("launch powers must be finite and non-negative".into()));
    }
    let m = span.pumps.len();
    let nw = n + m;
    let mut freqs = input.freqs_thz.to_vec();
    freqs.extend(span.pumps.iter().map(|p| p.freq_thz));

    let fiber = &span.fiber;
    let alpha = freqs.iter().map(|&f| fiber.loss_coefficient(f)).collect::<Result<Vec<_>, _>>()?;
    let mut k = vec![0.0; nw * nw];
    for i in 0..nw {
        for j in 0..nw {
            if i < n && j < n && !input.isrs {
                continue;
            }
            k[i * nw + j] = raman_coupling(fiber, freqs[i], freqs[j])?;
        }
    }
    let sys = System { n, m, alpha, k };

    let steps = (span.length_km / options.z_step_km).ceil().max(1.0) as usize;
    let h = span.length_km / steps as f64;
    let z: Vec<f64> = (0..=steps).map(|s| s as f64 * h).collect();

    // channels[k][i], pumps[k][p] on the grid
    let pump_launch: Vec<f64> = span.pumps.iter().map(|p| p.power_w()).collect();
    let guess = guess.filter(|g| g.pump_count() == m && g.z_km.len() == z.len() && m > 0);
    let mut pumps: Vec<Vec<f64>> = match guess {
        Some(g) => {
            let scale: Vec<f64> = (0..m)
                .map(|p| {
                    let end = g.pump(p)[steps];
                    if end > 0.0 { pump_launch[p] / end } else { 0.0 }
                })
                .collect();
            (0..z.len()).map(|k| (0..m).map(|p| g.pump(p)[k] * scale[p]).collect()).collect()
        }
        None => z
            .iter()
            .map(|&zk| (0..m).map(|p| pump_launch[p] * (-sys.alpha[n + p] * (span.length_km - zk)).exp()).collect())
            .collect(),
    };
    let mut channels = forward_sweep(&sys, input.launch_w, &pumps, h)?;
    let mut iterations = 0;
    let mut residual = 0.0;
    if m > 0 {
        // Anderson mixing on log pump powers; a plain sweep pair is the
        // fallback whenever the mixed point is unusable
        let mut mixer = Anderson::new(ANDERSON_DEPTH);
        loop {
            iterations += 1;
            let new_pumps = backward_sweep(&sys, &pump_launch, &channels, h)?;
            residual = max_relative_change(&pumps, &new_pumps);
            if residual < options.bvp_tol {
                pumps = new_pumps;
                channels = forward_sweep(&sys, input.launch_w, &pumps, h)?;
                break;
            }
            if iterations >= options.max_bvp_iterations {
                return Err(PropagationError::NoConvergence { iterations, residual });
            }
            let mixed = mixer.next(&log_flat(&pumps), &log_flat(&new_pumps));
            let candidate = exp_unflat(&mixed, m);
            match forward_sweep(&sys, input.launch_w, &candidate, h) {
                Ok(c) if candidate.iter().flatten().all(|v| v.is_finite() && *v > 0.0) => {
                    pumps = candidate;
                    channels = c;
                }
                _ => {
                    mixer.reset();
                    pumps = new_pumps;
                    channels = forward_sweep(&sys, input.launch_w, &pumps, h)?;
                }
            }
        }
    }

    let raman_ase_w = raman_ase(&sys, &freqs, input, &pumps, h);

    let mut powers_w = vec![Vec::with_capacity(z.len()); nw];
    for k in 0..z.len() {
        for i in 0..n {
            powers_w[i].push(channels[k][i]);
        }
        for p in 0..m {
            powers_w[n + p].push(pumps[k][p]);
        }
    }
    let mut direction = vec![WaveDirection::Forward; n];
    direction.extend(std::iter::repeat_n(WaveDirection::Backward, m));
    Ok(PowerProfile {
        z_km: z,
        freqs_thz: freqs,
        direction,
        powers_w,
        raman_ase_w,
        channel_count: n,
        bvp_iterations: iterations,
        bvp_residual: residual,
    })
}

const ANDERSON_DEPTH: usize = 5;

fn log_flat(p: &[Vec<f64>]) -> Vec<f64> {
    p.iter().flatten().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect()
}

fn exp_unflat(x: &[f64], m: usize) -> Vec<Vec<f64>> {
    x.chunks(m).map(|c| c.iter().map(|v| v.exp()).collect()).collect()
}

/// Type-II Anderson acceleration of a fixed-point map `x -> g(x)`.
struct Anderson {
    depth: usize,
    d_f: VecDeque<Vec<f64>>,
    d_g: VecDeque<Vec<f64>>,
    last: Option<(Vec<f64>, Vec<f64>)>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Anderson { depth, d_f: VecDeque::new(), d_g: VecDeque::new(), last: None }
    }

    fn reset(&mut self) {
        self.d_f.clear();
        self.d_g.clear();
        self.last = None;
    }

    fn next(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let f: Vec<f64> = g.iter().zip(x).map(|(a, b)| a - b).collect();
        if let Some((f0, g0)) = self.last.take() {
            self.d_f.push_back(f.iter().zip(&f0).map(|(a, b)| a - b).collect());
            self.d_g.push_back(g.iter().zip(&g0).map(|(a, b)| a - b).collect());
            if self.d_f.len() > self.depth {
                self.d_f.pop_front();
                self.d_g.pop_front();
            }
        }
        self.last = Some((f.clone(), g.to_vec()));
        let k = self.d_f.len();
        if k == 0 {
            return g.to_vec();
        }
        // least squares min |f - dF γ| through the regularized normal equations
        let mut a = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            rhs[i] = dot(&self.d_f[i], &f);
            for j in 0..=i {
                let v = dot(&self.d_f[i], &self.d_f[j]);
                a[i * k + j] = v;
                a[j * k + i] = v;
            }
        }
        let trace: f64 = (0..k).map(|i| a[i * k + i]).sum();
        for i in 0..k {
            a[i * k + i] += 1e-12 * trace + f64::MIN_POSITIVE;
        }
        let Some(gamma) = solve_small(&mut a, &mut rhs, k) else {
            self.reset();
            return g.to_vec();
        };
        let mut out = g.to_vec();
        for (c, dg) in gamma.iter().zip(&self.d_g) {
            for (o, d) in out.iter_mut().zip(dg) {
                *o -= c * d;
            }
        }
        out
    }
}

/// Gaussian elimination with partial pivoting on a k×k system.
fn solve_small(a: &mut [f64], b: &mut [f64], k: usize) -> Option<Vec<f64>> {
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| a[i * k + c].abs().total_cmp(&a[j * k + c].abs()))?;
        if !(a[piv * k + c].abs() > 0.0) {
            return None;
        }
        if piv != c {
            for j in 0..k {
                a.swap(c * k + j, piv * k + j);
            }
            b.swap(c, piv);
        }
        for r in c + 1..k {
            let f = a[r * k + c] / a[c * k + c];
            for j in c..k {
                a[r * k + j] -= f * a[c * k + j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|j| a[r * k + j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r * k + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn max_relative_change(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    old.iter()
        .flatten()
        .zip(new.iter().flatten())
        .map(|(a, b)| if *b > 0.0 { ((a - b) / b).abs() } else { (a - b).abs() })
        .fold(0.0, f64::max)
}

/// Channels forward from `z = 0` with pumps held fixed.
fn forward_sweep(sys: &System, launch: &[f64], pumps: &[Vec<f64>], h: f64) -> Result<Vec<Vec<f64>>, PropagationError> {
    let n = sys.n;
    let m = sys.m;
    let nw = n + m;
    let isrs = sys.k[..n * nw].chunks(nw).any(|row| row[..n].iter().any(|&v| v != 0.0));
    // per-channel external rate from pumps, at a given pump state
    let pump_rate = |pp: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let row = &sys.k[i * nw + n..i * nw + nw];
            out[i] = -sys.alpha[i] + dot(row, pp);
        }
    };
    let deriv = |y: &[f64], ext: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut r = ext[i];
            if isrs {
                let row = &sys.k[i * nw..i * nw + n];
                r += dot(row, y);
            }
            out[i] = y[i] * r;
        }
    };

    let steps = pumps.len() - 1;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(launch.to_vec());
    let mut y = launch.to_vec();
    let (mut e0, mut em, mut e1) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut mid = vec![0.0; m];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    pump_rate(&pumps[0], &mut e1);
    for s in 0..steps {
        std::mem::swap(&mut e0, &mut e1);
        for p in 0..m {
            mid[p] = geo_mid(pumps[s][p], pumps[s + 1][p]);
        }
        pump_rate(&mid, &mut em);
        pump_rate(&pumps[s + 1], &mut e1);
        rk4_step(&y, h, &e0, &em, &e1, &deriv, [&mut k1, &mut k2, &mut k3, &mut k4], &mut tmp);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_positive(&y, (s + 1) as f64 * h, h)?;
        out.push(y.clone());
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn rk4_step(
    y: &[f64],
    h: f64,
    e0: &[f64],
    em: &[f64],
    e1: &[f64],
    deriv: &dyn Fn(&[f64], &[f64], &mut [f64]),
    k: [&mut Vec<f64>; 4],
    tmp: &mut [f64],
) {
    let [k1, k2, k3, k4] = k;
    deriv(y, e0, k1);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    deriv(tmp, em, k2);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    deriv(tmp, em, k3);
    for i in 0..y.len() {
        tmp[i] = y[i] + h * k3[i];
    }
    deriv(tmp, e1, k4);
}

/// Pumps backward from `z = L` with channels held fixed. Returns the pump
/// state on the ascending grid.
fn backward_sweep(sys: &System, launch: &[f64], channels: &[Vec<f64>], h: f64) -> Result<Vec<Vec<f64>>, PropagationError> {
    let n = sys.n;
    let m = sys.m;
    let nw = n + m;
    let chan_rate = |ch: &[f64], out: &mut [f64]| {
        for p in 0..m {
            let row = &sys.k[(n + p) * nw..(n + p) * nw + n];
            out[p] = -sys.alpha[n + p] + dot(row, ch);
        }
    };
    // in the reversed coordinate u = L - z the pumps grow like forward waves
    let deriv = |y: &[f64], ext: &[f64], out: &mut [f64]| {
        for p in 0..m {
            let row = &sys.k[(n + p) * nw + n..(n + p) * nw + nw];
            out[p] = y[p] * (ext[p] + row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>());
        }
    };
    let steps = channels.len() - 1;
    let mut rev = Vec::with_capacity(steps + 1);
    rev.push(launch.to_vec());
    let mut y = launch.to_vec();
    let (mut e0, mut em, mut e1) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut mid = vec![0.0; n];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    chan_rate(&channels[steps], &mut e1);
    for s in (0..steps).rev() {
        std::mem::swap(&mut e0, &mut e1);
        for i in 0..n {
            mid[i] = geo_mid(channels[s][i], channels[s + 1][i]);
        }
        chan_rate(&mid, &mut em);
        chan_rate(&channels[s], &mut e1);
        rk4_step(&y, h, &e0, &em, &e1, &deriv, [&mut k1, &mut k2, &mut k3, &mut k4], &mut tmp);
        for p in 0..m {
            y[p] += h / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p]);
        }
        check_positive(&y, s as f64 * h, h)?;
        rev.push(y.clone());
    }
    rev.reverse();
    Ok(rev)
}

/// Forward-generated Raman ASE per channel at `z = L`.
fn raman_ase(sys: &System, freqs: &[f64], input: &SpanInputs, pumps: &[Vec<f64>], h: f64) -> Vec<f64> {
    let n = sys.n;
    let m = sys.m;
    if m == 0 {
        return vec![0.0; n];
    }
    let steps = pumps.len() - 1;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f = freqs[i];
        let seed = 2.0 * PLANCK * f * THZ * input.bandwidths_ghz[i] * GHZ;
        let mut gain = vec![0.0; m];
        let mut spont = vec![0.0; m];
        for p in 0..m {
            let fp = freqs[n + p];
            if fp > f {
                gain[p] = sys.kij(i, n + p);
                spont[p] = gain[p] * seed * (1.0 + phonon_occupancy(fp - f, input.temperature_k));
            }
        }
        // dA/dz = a(z) A + b(z)
        let coeffs = |pp: &[f64]| -> (f64, f64) {
            let mut a = -sys.alpha[i];
            let mut b = 0.0;
            for p in 0..m {
                a += gain[p] * pp[p];
                b += spont[p] * pp[p];
            }
            (a, b)
        };
        let mut amp = 0.0;
        let mut c1 = coeffs(&pumps[0]);
        let mut mid = vec![0.0; m];
        for s in 0..steps {
            let c0 = c1;
            for p in 0..m {
                mid[p] = geo_mid(pumps[s][p], pumps[s + 1][p]);
            }
            let cm = coeffs(&mid);
            c1 = coeffs(&pumps[s + 1]);
            let k1 = c0.0 * amp + c0.1;
            let k2 = cm.0 * (amp + 0.5 * h * k1) + cm.1;
            let k3 = cm.0 * (amp + 0.5 * h * k2) + cm.1;
            let k4 = c1.0 * (amp + h * k3) + c1.1;
            amp += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push(amp.max(0.0));
    }
    out
}

/// Result of propagating the whole link with the launch spectrum restored
/// at every span input.
#[derive(Debug, Clone)]
pub struct LinkProfiles {
    /// One entry per span; identical spans share a profile.
    pub spans: Vec<Arc<PowerProfile>>,
    /// Per-span, per-channel lumped amplifier gain (linear).
    pub amplifier_gain: Vec<Vec<f64>>,
    /// Raman ASE per channel at the receiver, referred to the amplifier
    /// output and summed over spans, W.
    pub raman_ase_w: Vec<f64>,
}

pub fn link_propagate(scenario: &Scenario) -> Result<LinkProfiles, PropagationError> {
    link_propagate_warm(scenario, None)
}

/// As [`link_propagate`], warm-starting span `s` from `warm.spans[s]`.
pub fn link_propagate_warm(scenario: &Scenario, warm: Option<&LinkProfiles>) -> Result<LinkProfiles, PropagationError> {
    let plan = scenario.plan();
    let freqs = plan.freqs_thz();
    let bw = plan.bandwidths_ghz();
    let launch = scenario.launch_w();
    let input = SpanInputs {
        freqs_thz: &freqs,
        bandwidths_ghz: &bw,
        launch_w: &launch,
        isrs: scenario.isrs_enabled(),
        temperature_k: scenario.reference_temperature_k(),
    };
    let mut cache: Vec<(&SpanSpec, Arc<PowerProfile>, Vec<f64>)> = Vec::new();
    let mut spans = Vec::new();
    let mut gains = Vec::new();
    let mut ase = vec![0.0; freqs.len()];
    for (s, span) in scenario.spans().iter().enumerate() {
        let hit = cache.iter().find(|(s, _, _)| *s == span).map(|(_, p, g)| (p.clone(), g.clone()));
        let (profile, gain) = match hit {
            Some(found) => found,
            None => {
                let guess = warm.and_then(|w| w.spans.get(s)).map(|p| p.as_ref());
                let profile = Arc::new(propagate_span_warm(span, &input, scenario.solver(), guess)?);
                let loss = db_to_linear(-span.lumped_loss_db);
                let gain: Vec<f64> = profile
                    .channel_output_w()
                    .iter()
                    .zip(&launch)
                    .map(|(out, l)| if *out > 0.0 { l / (out * loss) } else { 1.0 })
                    .collect();
                cache.push((span, profile.clone(), gain.clone()));
                (profile, gain)
            }
        };
        for i in 0..freqs.len() {
            let out = profile.channel(i).last().copied().unwrap_or(0.0);
            if out > 0.0 {
                ase[i] += profile.raman_ase_w[i] * launch[i] / out;
            }
        }
        spans.push(profile);
        gains.push(gain);
    }
    Ok(LinkProfiles { spans, amplifier_gain: gains, raman_ase_w: ase })
}
