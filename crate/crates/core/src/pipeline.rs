//! End-to-end evaluation of a scenario: power evolution, closed-form NLI,
//! amplifier noise and per-channel metrics, plus the summary tables the
//! command line writes out.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::metrics::{channel_metrics, dfa_ase, equivalent_nf, throughput, ChannelMetrics, MetricsError};
use crate::nli::{nli_closed_form, NliError, NliResult};
use crate::propagation::{link_propagate_warm, propagate_span, LinkProfiles, PropagationError, SpanInputs};
use crate::scenario::Scenario;
use crate::units::linear_to_db;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Nli(#[from] NliError),
    #[error("channel {channel}: {source}")]
    Metrics {
        channel: usize,
        #[source]
        source: MetricsError,
    },
}

/// Everything computed for one scenario.
#[derive(Debug, Clone)]
pub struct LinkEvaluation {
    pub link: LinkProfiles,
    pub nli: NliResult,
    pub metrics: Vec<ChannelMetrics>,
}

impl LinkEvaluation {
    pub fn info_rates(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.info_rate_tbps).collect()
    }
}

/// DFA ASE per channel summed over spans, W at the amplifier outputs.
pub fn dfa_ase_per_channel(scenario: &Scenario, link: &LinkProfiles) -> Result<Vec<f64>, SimulationError> {
    let plan = scenario.plan();
    let mut ase = vec![0.0; plan.len()];
    for (span, gains) in scenario.spans().iter().zip(&link.amplifier_gain) {
        for (i, ch) in plan.channels().iter().enumerate() {
            let nf = span.amplifier_for(&ch.band).map(|a| a.noise_figure_db).unwrap_or(f64::NAN);
            ase[i] += dfa_ase(gains[i], nf, ch.center_thz, ch.bandwidth_ghz())
                .map_err(|source| SimulationError::Metrics { channel: i, source })?;
        }
    }
    Ok(ase)
}

/// Link propagation, closed-form NLI and per-channel metrics.
pub fn evaluate_link(scenario: &Scenario) -> Result<LinkEvaluation, SimulationError> {
    evaluate_link_warm(scenario, None)
}

/// As [`evaluate_link`], warm-starting the pump relaxation from `warm`.
pub fn evaluate_link_warm(scenario: &Scenario, warm: Option<&LinkProfiles>) -> Result<LinkEvaluation, SimulationError> {
    let link = link_propagate_warm(scenario, warm)?;
    let nli = nli_closed_form(scenario, &link)?;
    let ase = dfa_ase_per_channel(scenario, &link)?;
    let launch = scenario.launch_w();
    let metrics = (0..launch.len())
        .map(|i| {
            channel_metrics(launch[i], ase[i], link.raman_ase_w[i], nli.p_nli_w[i], scenario.ir_curve())
                .map_err(|source| SimulationError::Metrics { channel: i, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LinkEvaluation { link, nli, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandSummary {
    pub band: String,
    pub channels: usize,
    pub throughput_tbps: f64,
    #[serde(rename = "gsnr_min_dB")]
    pub gsnr_min_db: f64,
    #[serde(rename = "gsnr_max_dB")]
    pub gsnr_max_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub throughput_tbps: f64,
    pub mean_ir_tbps: f64,
    /// Peak-to-peak GSNR over all channels.
    #[serde(rename = "gsnr_pp_dB")]
    pub gsnr_pp_db: f64,
    #[serde(rename = "gsnr_min_dB")]
    pub gsnr_min_db: f64,
    #[serde(rename = "gsnr_max_dB")]
    pub gsnr_max_db: f64,
    pub per_band: Vec<BandSummary>,
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn summarize(scenario: &Scenario, metrics: &[ChannelMetrics]) -> Summary {
    let plan = scenario.plan();
    let per_band = plan
        .bands()
        .iter()
        .map(|b| {
            let idx = plan.band_indices(&b.name);
            let ms: Vec<ChannelMetrics> = idx.iter().map(|&i| metrics[i].clone()).collect();
            let (lo, hi) = min_max(ms.iter().map(|m| m.gsnr_db));
            BandSummary { band: b.name.clone(), channels: ms.len(), throughput_tbps: throughput(&ms), gsnr_min_db: lo, gsnr_max_db: hi }
        })
        .collect();
    let (lo, hi) = min_max(metrics.iter().map(|m| m.gsnr_db));
    let total = throughput(metrics);
    Summary {
        throughput_tbps: total,
        mean_ir_tbps: if metrics.is_empty() { 0.0 } else { total / metrics.len() as f64 },
        gsnr_pp_db: hi - lo,
        gsnr_min_db: lo,
        gsnr_max_db: hi,
        per_band,
    }
}

/// On/off gain of the first span's pumps and the noise figure of the
/// lumped amplifier that would give the same gain and ASE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RamanDiagnostics {
    #[serde(rename = "on_off_gain_dB")]
    pub on_off_gain_db: Vec<f64>,
    /// `None` where the on/off gain is not positive.
    #[serde(rename = "equivalent_nf_dB")]
    pub equivalent_nf_db: Vec<Option<f64>>,
}

pub fn raman_diagnostics(scenario: &Scenario, link: &LinkProfiles) -> Result<Option<RamanDiagnostics>, SimulationError> {
    let span = &scenario.spans()[0];
    if span.pumps.is_empty() {
        return Ok(None);
    }
    let plan = scenario.plan();
    let freqs = plan.freqs_thz();
    let bw = plan.bandwidths_ghz();
    let launch = scenario.launch_w();
    let unpumped = crate::scenario::SpanSpec { pumps: Vec::new(), ..span.clone() };
    let input = SpanInputs {
        freqs_thz: &freqs,
        bandwidths_ghz: &bw,
        launch_w: &launch,
        isrs: scenario.isrs_enabled(),
        temperature_k: scenario.reference_temperature_k(),
    };
    let off = propagate_span(&unpumped, &input, scenario.solver())?.channel_output_w();
    let on_profile = &link.spans[0];
    let on = on_profile.channel_output_w();
    let mut gain = Vec::with_capacity(freqs.len());
    let mut nf = Vec::with_capacity(freqs.len());
    for i in 0..freqs.len() {
        let g = linear_to_db(on[i] / off[i]);
        gain.push(g);
        nf.push(equivalent_nf(g, on_profile.raman_ase_w[i], freqs[i], bw[i]).ok());
    }
    Ok(Some(RamanDiagnostics { on_off_gain_db: gain, equivalent_nf_db: nf }))
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub evaluation: LinkEvaluation,
    pub summary: Summary,
    pub raman: Option<RamanDiagnostics>,
    pub warnings: Vec<String>,
}

/// Full simulation with diagnostics.
pub fn simulate(scenario: &Scenario) -> Result<SimulationResult, SimulationError> {
    let evaluation = evaluate_link(scenario)?;
    let summary = summarize(scenario, &evaluation.metrics);
    let raman = raman_diagnostics(scenario, &evaluation.link)?;
    let mut warnings = evaluation.nli.warnings.clone();
    for (i, m) in evaluation.metrics.iter().enumerate() {
        if m.infinite.any() {
            warnings.push(format!("channel {i}: a noise term is zero, ratio reported as +inf"));
        }
    }
    Ok(SimulationResult { evaluation, summary, raman, warnings })
}

fn fmt_db(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "inf".into()
    }
}

/// Per-channel metrics table with units in the column names.
pub fn write_metrics_csv<W: Write>(scenario: &Scenario, metrics: &[ChannelMetrics], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "channel",
        "band",
        "freq_THz",
        "launch_dBm",
        "OSNR_dB",
        "OSNR_dfa_only_dB",
        "GSNR_NLI_dB",
        "GSNR_dB",
        "IR_Tbps",
        "P_ASE_dfa_W",
        "P_ASE_raman_W",
        "P_NLI_W",
    ])?;
    for (i, (m, ch)) in metrics.iter().zip(scenario.plan().channels()).enumerate() {
        w.write_record(&[
            i.to_string(),
            ch.band.clone(),
            format!("{:.6}", ch.center_thz),
            format!("{:.4}", m.launch_power_dbm),
            fmt_db(m.osnr_db),
            fmt_db(m.osnr_dfa_only_db),
            fmt_db(m.gsnr_nli_db),
            fmt_db(m.gsnr_db),
            format!("{:.6}", m.info_rate_tbps),
            format!("{:.6e}", m.p_ase_dfa_w),
            format!("{:.6e}", m.p_ase_raman_w),
            format!("{:.6e}", m.p_nli_w),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::scenario::PumpSpec;
    use approx::assert_relative_eq;

    #[test]
    fn default_scenario_runs_end_to_end() {
        let s = presets::cls_default();
        let r = simulate(&s).unwrap();
        assert_eq!(r.evaluation.metrics.len(), 150);
        assert!(r.raman.is_none());
        assert_eq!(r.summary.per_band.len(), 3);
        let band_sum: f64 = r.summary.per_band.iter().map(|b| b.throughput_tbps).sum();
        assert_relative_eq!(band_sum, r.summary.throughput_tbps, max_relative = 1e-12);
        for m in &r.evaluation.metrics {
            let lhs = 1.0 / 10f64.powf(m.gsnr_db / 10.0);
            let rhs = 1.0 / 10f64.powf(m.osnr_db / 10.0) + 1.0 / 10f64.powf(m.gsnr_nli_db / 10.0);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
            assert!(m.p_ase_raman_w == 0.0);
            assert!(m.gsnr_db > 5.0 && m.gsnr_db < 25.0, "{}", m.gsnr_db);
        }
    }

    #[test]
    fn summary_json_schema() {
        let s = presets::cls_default();
        let r = simulate(&s).unwrap();
        let v = serde_json::to_value(&r.summary).unwrap();
        for key in ["throughput_tbps", "gsnr_pp_dB", "per_band"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["per_band"][1]["band"], "C");
    }

    #[test]
    fn pumps_add_gain_and_raman_noise() {
        let s = presets::cls_default().with_pumps(&[PumpSpec::backward(213.0, 23.0)]).unwrap();
        let r = simulate(&s).unwrap();
        let d = r.raman.unwrap();
        let last = 149;
        assert!(d.on_off_gain_db[last] > 3.0, "{}", d.on_off_gain_db[last]);
        assert!(d.on_off_gain_db[last] > d.on_off_gain_db[0]);
        let m = &r.evaluation.metrics[last];
        assert!(m.p_ase_raman_w > 0.0 && m.osnr_dfa_only_db > m.osnr_db);
        assert!(d.equivalent_nf_db[last].unwrap() < 3.0);
    }

    #[test]
    fn metrics_csv_has_units() {
        let s = presets::cls_default();
        let r = simulate(&s).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&s, &r.evaluation.metrics, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("channel,band,freq_THz,launch_dBm,OSNR_dB,OSNR_dfa_only_dB,GSNR_NLI_dB,GSNR_dB,IR_Tbps"));
        assert_eq!(text.lines().count(), 151);
    }
}
