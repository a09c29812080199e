//! Incoherent GN closed form with per-channel effective attenuation.
//!
//! For channel `i` and interferer `j` in one span:
//!
//! ```text
//! η_SCI(i)   = 16/27 · γ_ii² · L_eff,i² · ψ_ii / B_i²
//! η_XCI(i,j) = 32/27 · γ_ij² · L_eff,j² · ψ_ij / B_j²
//! ψ_ii = asinh(π²/2 · |β2| L_a,i · B_i²) / (2π |β2| L_a,i)
//! ψ_ij = [asinh(π² |β2| L_a,j B_i (Δf + B_j/2)) − asinh(π² |β2| L_a,j B_i (Δf − B_j/2))] / (4π |β2| L_a,j)
//! ```
//!
//! with `L_eff = ∫ρ dz` taken from the power profile and `L_a = 1/(2ᾱ)`,
//! where ᾱ is the field attenuation of a pure-loss span with the same
//! `L_eff`. This is how ISRS and Raman gain enter: a channel that gains
//! power has a longer effective length and a smaller ᾱ. The XCI kernel
//! depends only on the interferer's power profile, so its values are used.
//! β2 is taken midway between the two channels.
//!
//! A least-squares exponential fit over the whole span weights the
//! low-power tail as much as the high-power start, which is where NLI is
//! generated; it is used only to flag non-exponential profiles.

use std::f64::consts::PI;
use std::sync::Arc;

use super::{NliError, NliMethod, NliResult, GN_PREFACTOR};
use crate::fiber::FiberSpec;
use crate::propagation::{alpha_for_effective_length, effective_alpha_fit, effective_length, LinkProfiles, PowerProfile};
use crate::scenario::Scenario;

/// Smallest field attenuation used in the asymptotic length `1/(2ᾱ)`, 1/km.
pub const ALPHA_FLOOR_PER_KM: f64 = 1e-4;

/// RMS log-domain misfit above which the single-exponential profile is
/// flagged as a poor description of the channel.
pub const FIT_RESIDUAL_WARNING: f64 = 0.05;

/// NLI efficiencies of one span, 1/W²: `P_NLI,i = η_SCI(i)·P_i³ + Σ_j η_XCI(i,j)·P_j²·P_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanNliCoefficients {
    pub eta_sci: Vec<f64>,
    /// Row-major `n × n`, zero on the diagonal.
    pub eta_xci: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SpanNliCoefficients {
    pub fn len(&self) -> usize {
        self.eta_sci.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta_sci.is_empty()
    }

    pub fn xci(&self, i: usize, j: usize) -> f64 {
        self.eta_xci[i * self.len() + j]
    }

    /// SCI and XCI powers for the given launch powers.
    pub fn apply(&self, launch_w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let sq: Vec<f64> = launch_w.iter().map(|p| p * p).collect();
        let sci = (0..n).map(|i| self.eta_sci[i] * sq[i] * launch_w[i]).collect();
        let xci = (0..n)
            .map(|i| {
                let row = &self.eta_xci[i * n..(i + 1) * n];
                row.iter().zip(&sq).map(|(e, p2)| e * p2).sum::<f64>() * launch_w[i]
            })
            .collect();
        (sci, xci)
    }
}

/// `asinh(x)/x`, continuous at 0.
fn asinhc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        x.asinh() / x
    }
}

/// `ψ_ii/B²` (dimensionless). `d` is `|β2|·L_a` in ps², `b` in GHz.
fn psi_sci_norm(d: f64, b: f64) -> f64 {
    let arg = PI * PI / 2.0 * d * b * b * 1e-6;
    PI / 4.0 * asinhc(arg)
}

/// `ψ_ij/B_j²` (dimensionless) for channel spacing `df` (GHz).
fn psi_xci_norm(d: f64, bi: f64, bj: f64, df: f64) -> f64 {
    let scale = PI * PI * d * bi * 1e-6;
    let (hi, lo) = (df + bj / 2.0, df - bj / 2.0);
    if scale * hi < 1e-8 {
        return PI * bi / (4.0 * bj);
    }
    ((scale * hi).asinh() - (scale * lo).asinh()) / (4.0 * PI * d * bj * bj * 1e-6)
}

pub fn span_coefficients(
    fiber: &FiberSpec,
    profile: &PowerProfile,
    bandwidths_ghz: &[f64],
) -> Result<SpanNliCoefficients, NliError> {
    let n = profile.channel_count;
    let f = &profile.freqs_thz[..n];
    let length = profile.length_km();
    let mut leff = Vec::with_capacity(n);
    let mut la = Vec::with_capacity(n);
    let mut poor_fit: Vec<(usize, f64)> = Vec::new();
    let mut clamped = Vec::new();
    for j in 0..n {
        let fit = effective_alpha_fit(profile, j)?;
        if fit.fit_residual > FIT_RESIDUAL_WARNING {
            poor_fit.push((j, fit.fit_residual));
        }
        let l_eff = effective_length(profile, j)?;
        let a = alpha_for_effective_length(l_eff, length);
        if a < ALPHA_FLOOR_PER_KM {
            clamped.push(j);
        }
        leff.push(l_eff);
        la.push(1.0 / (2.0 * a.max(ALPHA_FLOOR_PER_KM)));
    }
    let mut warnings = Vec::new();
    if let Some(&(worst, r)) = poor_fit.iter().max_by(|a, b| a.1.total_cmp(&b.1)) {
        warnings.push(format!(
            "{} channel(s) deviate from a single exponential by more than {FIT_RESIDUAL_WARNING} RMS (worst: channel {worst}, {r:.3})",
            poor_fit.len()
        ));
    }
    if !clamped.is_empty() {
        warnings.push(format!(
            "{} channel(s) have net span gain; attenuation clamped to {ALPHA_FLOOR_PER_KM}/km (first: channel {})",
            clamped.len(),
            clamped[0]
        ));
    }

    let mut eta_sci = vec![0.0; n];
    let mut eta_xci = vec![0.0; n * n];
    for i in 0..n {
        let g = fiber.gamma_xci(f[i], f[i])?;
        let d = fiber.dispersion_beta2(f[i])?.abs() * la[i];
        eta_sci[i] = GN_PREFACTOR * (g * leff[i]).powi(2) * psi_sci_norm(d, bandwidths_ghz[i]);
        for j in 0..n {
            if j == i {
                continue;
            }
            let g = fiber.gamma_xci(f[i], f[j])?;
            let d = fiber.dispersion_beta2(0.5 * (f[i] + f[j]))?.abs() * la[j];
            let df = (f[j] - f[i]).abs() * 1e3;
            eta_xci[i * n + j] =
                2.0 * GN_PREFACTOR * (g * leff[j]).powi(2) * psi_xci_norm(d, bandwidths_ghz[i], bandwidths_ghz[j], df);
        }
    }
    Ok(SpanNliCoefficients { eta_sci, eta_xci, warnings })
}

/// Groups identical span profiles: `(span index of first occurrence, count)`.
pub(super) fn distinct_spans(link: &LinkProfiles) -> Vec<(usize, usize)> {
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (s, p) in link.spans.iter().enumerate() {
        match groups.iter_mut().find(|(first, _)| Arc::ptr_eq(&link.spans[*first], p)) {
            Some(g) => g.1 += 1,
            None => groups.push((s, 1)),
        }
    }
    groups
}

pub(super) fn check_link(scenario: &Scenario, link: &LinkProfiles) -> Result<(), NliError> {
    let expected = scenario.spans().len();
    if link.spans.len() != expected {
        return Err(NliError::MissingProfile { expected, got: link.spans.len() });
    }
    Ok(())
}

/// Closed-form NLI for every channel, spans added incoherently.
pub fn nli_closed_form(scenario: &Scenario, link: &LinkProfiles) -> Result<NliResult, NliError> {
    check_link(scenario, link)?;
    let n = scenario.channel_count();
    let bw = scenario.plan().bandwidths_ghz();
    let launch = scenario.launch_w();
    let mut sci = vec![0.0; n];
    let mut xci = vec![0.0; n];
    let mut warnings: Vec<String> = Vec::new();
    for (s, count) in distinct_spans(link) {
        let coeffs = span_coefficients(&scenario.spans()[s].fiber, &link.spans[s], &bw)?;
        let (ps, px) = coeffs.apply(&launch);
        for i in 0..n {
            sci[i] += count as f64 * ps[i];
            xci[i] += count as f64 * px[i];
        }
        for w in coeffs.warnings {
            let w = format!("span {s}: {w}");
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
    }
    let p_nli_w = sci.iter().zip(&xci).map(|(a, b)| a + b).collect();
    Ok(NliResult {
        method: NliMethod::ClosedForm,
        channels: (0..n).collect(),
        freqs_thz: scenario.plan().freqs_thz(),
        sci_w: sci,
        xci_w: xci,
        p_nli_w,
        warnings,
    })
}
