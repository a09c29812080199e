//! Link scenario data model and its validated construction from a TOML
//! configuration document.
//!
//! A configuration may describe the link compactly (a `[link]` table
//! replicated over N spans, a flat launch level) or explicitly (a
//! `[[spans]]` array and a per-channel launch list). [`Scenario::to_toml`]
//! always writes the explicit form, which loads back to an identical value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fiber::{FiberError, FiberParams, FiberSpec, LossAnchor, DispersionAnchor, RamanReference};
use crate::metrics::{IrCurve, IrCurvePoints};
use crate::units::{dbm_to_watt, GHZ, THZ};

/// Tolerance for floating-point comparisons on the frequency grid, THz.
const GRID_EPS_THZ: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("per-band channel count must be at least 1")]
    EmptyBand,
    #[error("occupied bandwidth {occupied_ghz} GHz exceeds the {spacing_ghz} GHz spacing")]
    BandwidthExceedsSpacing { occupied_ghz: f64, spacing_ghz: f64 },
    #[error("band {band}: f_min must be below f_max")]
    EmptyInterval { band: String },
    #[error("bands {lower} and {upper} overlap or are out of order")]
    BandOrder { lower: String, upper: String },
    #[error("band {band}: grid overflows the upper edge by {overflow_ghz:.4} GHz")]
    Overflow { band: String, overflow_ghz: f64 },
    #[error("band {band}: symbol rate and roll-off must be positive and finite")]
    BadChannel { band: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub f_min_thz: f64,
    pub f_max_thz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub center_thz: f64,
    pub symbol_rate_gbd: f64,
    pub roll_off: f64,
    pub band: String,
}

impl Channel {
    /// Bandwidth used for noise and NLI accounting (the symbol rate), GHz.
    pub fn bandwidth_ghz(&self) -> f64 {
        self.symbol_rate_gbd
    }

    pub fn occupied_ghz(&self) -> f64 {
        self.symbol_rate_gbd * (1.0 + self.roll_off)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    bands: Vec<Band>,
    channels: Vec<Channel>,
    spacing_ghz: f64,
}

impl ChannelPlan {
    pub fn new(bands: Vec<Band>, channels: Vec<Channel>, spacing_ghz: f64) -> Result<Self, GridError> {
        check_bands(&bands)?;
        for c in &channels {
            if !(c.symbol_rate_gbd > 0.0 && c.roll_off >= 0.0 && c.symbol_rate_gbd.is_finite()) {
                return Err(GridError::BadChannel { band: c.band.clone() });
            }
            if c.occupied_ghz() > spacing_ghz + 1e-9 {
                return Err(GridError::BandwidthExceedsSpacing {
                    occupied_ghz: c.occupied_ghz(),
                    spacing_ghz,
                });
            }
            let band = bands
                .iter()
                .find(|b| b.name == c.band)
                .ok_or_else(|| GridError::EmptyInterval { band: c.band.clone() })?;
            if c.center_thz < band.f_min_thz - GRID_EPS_THZ || c.center_thz > band.f_max_thz + GRID_EPS_THZ {
                return Err(GridError::Overflow {
                    band: band.name.clone(),
                    overflow_ghz: (c.center_thz - band.f_max_thz) * 1e3,
                });
            }
        }
        if channels.windows(2).any(|w| w[1].center_thz <= w[0].center_thz) {
            return Err(GridError::BandOrder { lower: "channel".into(), upper: "channel".into() });
        }
        Ok(ChannelPlan { bands, channels, spacing_ghz })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn spacing_ghz(&self) -> f64 {
        self.spacing_ghz
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn freqs_thz(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.center_thz).collect()
    }

    pub fn bandwidths_ghz(&self) -> Vec<f64> {
        self.channels.iter().map(Channel::bandwidth_ghz).collect()
    }

    /// Channel indices belonging to `band`.
    pub fn band_indices(&self, band: &str) -> Vec<usize> {
        (0..self.channels.len()).filter(|&i| self.channels[i].band == band).collect()
    }
}

fn check_bands(bands: &[Band]) -> Result<(), GridError> {
    for b in bands {
        if !(b.f_min_thz < b.f_max_thz) {
            return Err(GridError::EmptyInterval { band: b.name.clone() });
        }
    }
    for w in bands.windows(2) {
        if w[1].f_min_thz < w[0].f_max_thz || w[0].name == w[1].name {
            return Err(GridError::BandOrder { lower: w[0].name.clone(), upper: w[1].name.clone() });
        }
    }
    Ok(())
}

/// Regular grid: in each band, centers `f_min + spacing/2 + k·spacing` for
/// `k = 0..count`. The last slot edge must not pass the band's upper edge.
pub fn build_channel_grid(
    bands: &[Band],
    per_band_count: usize,
    spacing_ghz: f64,
    symbol_rate_gbd: f64,
    roll_off: f64,
) -> Result<ChannelPlan, GridError> {
    let counts = vec![per_band_count; bands.len()];
    build_channel_grid_counts(bands, &counts, spacing_ghz, symbol_rate_gbd, roll_off)
}

/// [`build_channel_grid`] with a channel count per band.
pub fn build_channel_grid_counts(
    bands: &[Band],
    counts: &[usize],
    spacing_ghz: f64,
    symbol_rate_gbd: f64,
    roll_off: f64,
) -> Result<ChannelPlan, GridError> {
    check_bands(bands)?;
    let occupied = symbol_rate_gbd * (1.0 + roll_off);
    if occupied > spacing_ghz + 1e-9 {
        return Err(GridError::BandwidthExceedsSpacing { occupied_ghz: occupied, spacing_ghz });
    }
    let spacing = spacing_ghz * GHZ / THZ;
    let mut channels = Vec::new();
    for (band, &count) in bands.iter().zip(counts) {
        if count == 0 {
            return Err(GridError::EmptyBand);
        }
        let overflow = band.f_min_thz + count as f64 * spacing - band.f_max_thz;
        if overflow > GRID_EPS_THZ {
            return Err(GridError::Overflow { band: band.name.clone(), overflow_ghz: overflow * 1e3 });
        }
        let anchor = band.f_min_thz + spacing / 2.0;
        channels.extend((0..count).map(|k| Channel {
            center_thz: anchor + k as f64 * spacing,
            symbol_rate_gbd,
            roll_off,
            band: band.name.clone(),
        }));
    }
    ChannelPlan::new(bands.to_vec(), channels, spacing_ghz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PumpDirection {
    #[default]
    Backward,
    /// Reserved; rejected by validation.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpSpec {
    pub freq_thz: f64,
    pub power_dbm: f64,
    #[serde(default)]
    pub direction: PumpDirection,
}

impl PumpSpec {
    pub fn backward(freq_thz: f64, power_dbm: f64) -> Self {
        PumpSpec { freq_thz, power_dbm, direction: PumpDirection::Backward }
    }

    pub fn power_w(&self) -> f64 {
        dbm_to_watt(self.power_dbm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// Gain restores the target launch spectrum at the next span input.
    #[default]
    RestoreLaunch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplifierSpec {
    pub band: String,
    pub noise_figure_db: f64,
    #[serde(default)]
    pub gain_mode: GainMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanSpec {
    pub fiber: FiberSpec,
    pub length_km: f64,
    pub lumped_loss_db: f64,
    pub amplifiers: Vec<AmplifierSpec>,
    pub pumps: Vec<PumpSpec>,
}

impl SpanSpec {
    pub fn amplifier_for(&self, band: &str) -> Option<&AmplifierSpec> {
        self.amplifiers.iter().find(|a| a.band == band)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default = "SolverOptions::default_z_step")]
    pub z_step_km: f64,
    #[serde(default = "SolverOptions::default_bvp_tol")]
    pub bvp_tol: f64,
    #[serde(default = "SolverOptions::default_max_iter")]
    pub max_bvp_iterations: usize,
}

impl SolverOptions {
    fn default_z_step() -> f64 {
        0.1
    }
    fn default_bvp_tol() -> f64 {
        1e-6
    }
    fn default_max_iter() -> usize {
        200
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            z_step_km: Self::default_z_step(),
            bvp_tol: Self::default_bvp_tol(),
            max_bvp_iterations: Self::default_max_iter(),
        }
    }
}

/// A fully validated link description. Immutable once built; the `with_*`
/// helpers return modified copies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    plan: ChannelPlan,
    spans: Vec<SpanSpec>,
    launch_dbm: Vec<f64>,
    isrs_enabled: bool,
    reference_temperature_k: f64,
    ir_curve: IrCurve,
    solver: SolverOptions,
}

impl Scenario {
    pub fn new(
        plan: ChannelPlan,
        spans: Vec<SpanSpec>,
        launch_dbm: Vec<f64>,
        isrs_enabled: bool,
        reference_temperature_k: f64,
        ir_curve: IrCurve,
        solver: SolverOptions,
    ) -> Result<Self, ScenarioError> {
        let s = Scenario { plan, spans, launch_dbm, isrs_enabled, reference_temperature_k, ir_curve, solver };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.plan.is_empty() {
            return Err(invalid("bands", "channel plan must contain at least one channel"));
        }
        if self.spans.is_empty() {
            return Err(invalid("spans", "spans must be non-empty"));
        }
        if self.launch_dbm.len() != self.plan.len() {
            return Err(invalid(
                "launch",
                format!("launch spectrum has {} entries for {} channels", self.launch_dbm.len(), self.plan.len()),
            ));
        }
        if let Some(i) = self.launch_dbm.iter().position(|p| !p.is_finite()) {
            return Err(invalid(format!("launch[{i}]"), "launch power must be finite"));
        }
        if !(self.reference_temperature_k > 0.0) {
            return Err(invalid("temperature_k", "must be positive"));
        }
        let o = &self.solver;
        if !(o.z_step_km > 0.0 && o.z_step_km.is_finite()) {
            return Err(invalid("solver.z_step_km", "must be positive"));
        }
        if !(o.bvp_tol > 0.0) || o.max_bvp_iterations == 0 {
            return Err(invalid("solver", "bvp_tol and max_bvp_iterations must be positive"));
        }
        for (s, span) in self.spans.iter().enumerate() {
            let at = |field: &str| format!("spans[{s}].{field}");
            if !(span.length_km > 0.0 && span.length_km.is_finite()) {
                return Err(invalid(at("length_km"), "must be positive"));
            }
            if !(span.lumped_loss_db >= 0.0) {
                return Err(invalid(at("lumped_loss_db"), "must be non-negative"));
            }
            if span.length_km / o.z_step_km < 2.0 {
                return Err(invalid("solver.z_step_km", "step must be at most half the span length"));
            }
            for (a, amp) in span.amplifiers.iter().enumerate() {
                if !(amp.noise_figure_db >= 3.0) {
                    return Err(invalid(
                        at(&format!("amplifiers[{a}].noise_figure_db")),
                        "lumped amplifier noise figure must be at least 3 dB",
                    ));
                }
            }
            for band in self.plan.bands() {
                if span.amplifier_for(&band.name).is_none() {
                    return Err(invalid(at("amplifiers"), format!("no amplifier for band {}", band.name)));
                }
            }
            for (p, pump) in span.pumps.iter().enumerate() {
                let path = at(&format!("pumps[{p}]"));
                if pump.direction == PumpDirection::Forward {
                    return Err(invalid(path, "forward pumping is not supported"));
                }
                if !pump.power_dbm.is_finite() {
                    return Err(invalid(path, "pump power must be finite"));
                }
                let (lo, hi) = crate::fiber::VALIDITY_WINDOW_THZ;
                if !(lo..=hi).contains(&pump.freq_thz) {
                    return Err(invalid(path, format!("pump frequency outside [{lo}, {hi}] THz")));
                }
                if self.plan.freqs_thz().iter().any(|&f| (f - pump.freq_thz).abs() < 1e-6) {
                    return Err(invalid(path, "pump coincides with a channel"));
                }
            }
        }
        Ok(())
    }

    pub fn plan(&self) -> &ChannelPlan {
        &self.plan
    }

    pub fn spans(&self) -> &[SpanSpec] {
        &self.spans
    }

    pub fn launch_dbm(&self) -> &[f64] {
        &self.launch_dbm
    }

    pub fn launch_w(&self) -> Vec<f64> {
        self.launch_dbm.iter().map(|&p| dbm_to_watt(p)).collect()
    }

    pub fn isrs_enabled(&self) -> bool {
        self.isrs_enabled
    }

    pub fn reference_temperature_k(&self) -> f64 {
        self.reference_temperature_k
    }

    pub fn ir_curve(&self) -> &IrCurve {
        &self.ir_curve
    }

    pub fn solver(&self) -> &SolverOptions {
        &self.solver
    }

    pub fn channel_count(&self) -> usize {
        self.plan.len()
    }

    /// Pump count shared by every span, or `None` when spans disagree.
    pub fn pump_count(&self) -> Option<usize> {
        let n = self.spans[0].pumps.len();
        self.spans.iter().all(|s| s.pumps.len() == n).then_some(n)
    }

    pub fn with_launch_dbm(&self, launch_dbm: Vec<f64>) -> Result<Self, ScenarioError> {
        Scenario { launch_dbm, ..self.clone() }.validated()
    }

    /// Replaces the pumps of every span.
    pub fn with_pumps(&self, pumps: &[PumpSpec]) -> Result<Self, ScenarioError> {
        let mut s = self.clone();
        for span in &mut s.spans {
            span.pumps = pumps.to_vec();
        }
        s.validated()
    }

    pub fn with_isrs(&self, enabled: bool) -> Self {
        Scenario { isrs_enabled: enabled, ..self.clone() }
    }

    pub fn with_ir_curve(&self, ir_curve: IrCurve) -> Self {
        Scenario { ir_curve, ..self.clone() }
    }

    pub fn with_solver(&self, solver: SolverOptions) -> Result<Self, ScenarioError> {
        Scenario { solver, ..self.clone() }.validated()
    }

    fn validated(self) -> Result<Self, ScenarioError> {
        self.validate()?;
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical JSON form; equal for semantically identical
    /// configurations.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Explicit configuration describing exactly this scenario.
    pub fn to_config(&self) -> ScenarioConfig {
        let mut fibers: BTreeMap<String, FiberConfig> = BTreeMap::new();
        let mut span_cfgs = Vec::new();
        for span in &self.spans {
            let name = unique_fiber_name(&mut fibers, &span.fiber);
            span_cfgs.push(SpanConfig {
                fiber: name,
                length_km: span.length_km,
                lumped_loss_db: span.lumped_loss_db,
                amplifiers: Some(span.amplifiers.clone()),
                pumps: Some(span.pumps.clone()),
            });
        }
        let channels = self.plan.channels();
        let first = &channels[0];
        ScenarioConfig {
            isrs: self.isrs_enabled,
            temperature_k: self.reference_temperature_k,
            grid: GridConfig {
                spacing_ghz: self.plan.spacing_ghz,
                symbol_rate_gbd: first.symbol_rate_gbd,
                roll_off: first.roll_off,
                channels_per_band: None,
                band_edges: BandEdges::Strict,
            },
            bands: self
                .plan
                .bands()
                .iter()
                .map(|b| BandConfig {
                    name: b.name.clone(),
                    f_min_thz: b.f_min_thz,
                    f_max_thz: b.f_max_thz,
                    channels: Some(self.plan.band_indices(&b.name).len()),
                    noise_figure_db: None,
                })
                .collect(),
            fibers,
            link: None,
            spans: Some(span_cfgs),
            pumps: None,
            launch: LaunchConfig {
                flat_dbm: None,
                per_band_dbm: None,
                per_channel_dbm: Some(self.launch_dbm.clone()),
            },
            ir_curve: IrCurveConfig::Inline(self.ir_curve.clone().into()),
            solver: self.solver,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_config()).expect("scenario config serializes")
    }
}

fn unique_fiber_name(fibers: &mut BTreeMap<String, FiberConfig>, fiber: &FiberSpec) -> String {
    let params = fiber.params();
    for (name, cfg) in fibers.iter() {
        if let FiberConfig { raman: RamanConfig::Inline(r), .. } = cfg {
            if cfg.clone().into_params(name, r.clone()) == *params {
                return name.clone();
            }
        }
    }
    let mut name = params.name.clone();
    let mut k = 2;
    while fibers.contains_key(&name) {
        name = format!("{}_{k}", params.name);
        k += 1;
    }
    fibers.insert(name.clone(), FiberConfig::from_params(params));
    name
}

// ---------------------------------------------------------------------------
// configuration schema

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandEdges {
    /// Band edges are hard limits for the channel slots.
    Strict,
    /// Band edges are approximate: an upper edge overflowed by less than one
    /// spacing is moved out to the last slot edge.
    #[default]
    Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub spacing_ghz: f64,
    pub symbol_rate_gbd: f64,
    pub roll_off: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels_per_band: Option<usize>,
    #[serde(default)]
    pub band_edges: BandEdges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub name: String,
    pub f_min_thz: f64,
    pub f_max_thz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    /// Lumped amplifier noise figure for this band in every span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_figure_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RamanConfig {
    /// `"synthetic_silica"`
    Builtin(String),
    Csv { pump_ref_thz: f64, csv: PathBuf },
    Inline(RamanReference),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberConfig {
    pub loss_anchors: Vec<LossAnchor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rayleigh_a_db_um4_km: Option<f64>,
    pub dispersion: DispersionAnchor,
    pub n2_m2_w: f64,
    pub core_radius_um: f64,
    pub numerical_aperture: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat_at_thz: Option<f64>,
    pub raman: RamanConfig,
}

impl FiberConfig {
    fn from_params(p: &FiberParams) -> Self {
        FiberConfig {
            loss_anchors: p.loss_anchors.clone(),
            rayleigh_a_db_um4_km: p.rayleigh_a_db_um4_km,
            dispersion: p.dispersion,
            n2_m2_w: p.n2_m2_w,
            core_radius_um: p.core_radius_um,
            numerical_aperture: p.numerical_aperture,
            flat_at_thz: p.flat_at_thz,
            raman: RamanConfig::Inline(p.raman.clone()),
        }
    }

    fn into_params(self, name: &str, raman: RamanReference) -> FiberParams {
        FiberParams {
            name: name.to_string(),
            loss_anchors: self.loss_anchors,
            rayleigh_a_db_um4_km: self.rayleigh_a_db_um4_km,
            dispersion: self.dispersion,
            n2_m2_w: self.n2_m2_w,
            core_radius_um: self.core_radius_um,
            numerical_aperture: self.numerical_aperture,
            raman,
            flat_at_thz: self.flat_at_thz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub span_count: usize,
    pub length_km: f64,
    pub lumped_loss_db: f64,
    #[serde(default = "default_fiber_name")]
    pub fiber: String,
}

fn default_fiber_name() -> String {
    "ssmf".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanConfig {
    #[serde(default = "default_fiber_name")]
    pub fiber: String,
    pub length_km: f64,
    pub lumped_loss_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplifiers: Option<Vec<AmplifierSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pumps: Option<Vec<PumpSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LaunchConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_band_dbm: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_channel_dbm: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IrCurveConfig {
    /// `"synthetic"`
    Builtin(String),
    Csv { csv: PathBuf },
    Inline(IrCurvePoints),
}

impl Default for IrCurveConfig {
    fn default() -> Self {
        IrCurveConfig::Builtin("synthetic".into())
    }
}

fn default_true() -> bool {
    true
}

fn default_temperature() -> f64 {
    300.0
}

/// Top-level configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_true")]
    pub isrs: bool,
    #[serde(default = "default_temperature")]
    pub temperature_k: f64,
    pub grid: GridConfig,
    pub bands: Vec<BandConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fibers: BTreeMap<String, FiberConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<SpanConfig>>,
    /// Pumps applied to every span that does not list its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pumps: Option<Vec<PumpSpec>>,
    #[serde(default)]
    pub launch: LaunchConfig,
    #[serde(default)]
    pub ir_curve: IrCurveConfig,
    #[serde(default)]
    pub solver: SolverOptions,
}

/// Parses and validates a TOML scenario. Relative CSV paths are resolved
/// against the current directory.
pub fn load_scenario(config_text: &str) -> Result<Scenario, ScenarioError> {
    load_scenario_with_base(config_text, Path::new("."))
}

/// Reads a scenario file; relative CSV paths are resolved against its
/// directory.
pub fn load_scenario_file(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_scenario_with_base(&text, base)
}

pub fn load_scenario_with_base(config_text: &str, base: &Path) -> Result<Scenario, ScenarioError> {
    let cfg: ScenarioConfig = toml::from_str(config_text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    build_scenario(cfg, base)
}

fn grid_error(e: GridError) -> ScenarioError {
    let path = match &e {
        GridError::BandwidthExceedsSpacing { .. } => "grid.spacing_ghz".to_string(),
        GridError::EmptyBand => "bands.channels".to_string(),
        GridError::BadChannel { .. } => "grid.symbol_rate_gbd".to_string(),
        GridError::EmptyInterval { band } | GridError::Overflow { band, .. } => format!("bands.{band}"),
        GridError::BandOrder { .. } => "bands".to_string(),
    };
    invalid(path, e.to_string())
}

pub fn build_scenario(cfg: ScenarioConfig, base: &Path) -> Result<Scenario, ScenarioError> {
    if cfg.bands.is_empty() {
        return Err(invalid("bands", "at least one band is required"));
    }
    let counts: Vec<usize> = cfg
        .bands
        .iter()
        .enumerate()
        .map(|(i, b)| {
            b.channels
                .or(cfg.grid.channels_per_band)
                .ok_or_else(|| invalid(format!("bands[{i}].channels"), "no channel count (set grid.channels_per_band)"))
        })
        .collect::<Result<_, _>>()?;

    let spacing_thz = cfg.grid.spacing_ghz * GHZ / THZ;
    let mut bands: Vec<Band> = cfg
        .bands
        .iter()
        .map(|b| Band { name: b.name.clone(), f_min_thz: b.f_min_thz, f_max_thz: b.f_max_thz })
        .collect();
    if cfg.grid.band_edges == BandEdges::Envelope {
        for (band, &n) in bands.iter_mut().zip(&counts) {
            let slot_edge = band.f_min_thz + n as f64 * spacing_thz;
            let overflow = slot_edge - band.f_max_thz;
            if overflow > 0.0 && overflow < spacing_thz {
                band.f_max_thz = slot_edge;
            }
        }
    }
    let plan = build_channel_grid_counts(&bands, &counts, cfg.grid.spacing_ghz, cfg.grid.symbol_rate_gbd, cfg.grid.roll_off)
        .map_err(grid_error)?;

    let mut fibers: BTreeMap<String, FiberSpec> = BTreeMap::new();
    for (name, fc) in &cfg.fibers {
        let raman = match &fc.raman {
            RamanConfig::Inline(r) => r.clone(),
            RamanConfig::Builtin(s) if s == "synthetic_silica" => RamanReference::synthetic_silica(),
            RamanConfig::Builtin(s) => {
                return Err(invalid(format!("fibers.{name}.raman"), format!("unknown builtin table {s:?}")))
            }
            RamanConfig::Csv { pump_ref_thz, csv } => {
                let path = base.join(csv);
                let file = std::fs::File::open(&path).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
                RamanReference::from_csv(file, *pump_ref_thz).map_err(|e| fiber_error(name, e))?
            }
        };
        let spec = FiberSpec::new(fc.clone().into_params(name, raman)).map_err(|e| fiber_error(name, e))?;
        fibers.insert(name.clone(), spec);
    }
    if !fibers.contains_key("ssmf") {
        fibers.insert("ssmf".into(), FiberSpec::standard_smf());
    }

    let default_amps = |path: &str| -> Result<Vec<AmplifierSpec>, ScenarioError> {
        cfg.bands
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let nf = b.noise_figure_db.ok_or_else(|| {
                    invalid(format!("{path}.amplifiers"), format!("no noise figure for band {} (set bands[{i}].noise_figure_db)", b.name))
                })?;
                Ok(AmplifierSpec { band: b.name.clone(), noise_figure_db: nf, gain_mode: GainMode::RestoreLaunch })
            })
            .collect()
    };
    let fiber_ref = |path: String, name: &str| -> Result<FiberSpec, ScenarioError> {
        fibers.get(name).cloned().ok_or_else(|| invalid(path, format!("unknown fiber {name:?}")))
    };
    let shared_pumps = cfg.pumps.clone().unwrap_or_default();

    let spans = match (&cfg.link, &cfg.spans) {
        (Some(_), Some(_)) => return Err(invalid("link", "use either [link] or [[spans]], not both")),
        (None, None) => return Err(invalid("spans", "spans must be non-empty")),
        (Some(link), None) => {
            if link.span_count == 0 {
                return Err(invalid("spans", "spans must be non-empty"));
            }
            let span = SpanSpec {
                fiber: fiber_ref("link.fiber".into(), &link.fiber)?,
                length_km: link.length_km,
                lumped_loss_db: link.lumped_loss_db,
                amplifiers: default_amps("link")?,
                pumps: shared_pumps.clone(),
            };
            vec![span; link.span_count]
        }
        (None, Some(list)) => {
            if list.is_empty() {
                return Err(invalid("spans", "spans must be non-empty"));
            }
            list.iter()
                .enumerate()
                .map(|(i, sc)| {
                    let path = format!("spans[{i}]");
                    Ok(SpanSpec {
                        fiber: fiber_ref(format!("{path}.fiber"), &sc.fiber)?,
                        length_km: sc.length_km,
                        lumped_loss_db: sc.lumped_loss_db,
                        amplifiers: match &sc.amplifiers {
                            Some(a) => a.clone(),
                            None => default_amps(&path)?,
                        },
                        pumps: sc.pumps.clone().unwrap_or_else(|| shared_pumps.clone()),
                    })
                })
                .collect::<Result<Vec<_>, ScenarioError>>()?
        }
    };

    let launch = resolve_launch(&cfg.launch, &plan)?;
    let ir_curve = match &cfg.ir_curve {
        IrCurveConfig::Builtin(s) if s == "synthetic" => IrCurve::synthetic_default(),
        IrCurveConfig::Builtin(s) => return Err(invalid("ir_curve", format!("unknown builtin curve {s:?}"))),
        IrCurveConfig::Inline(points) => {
            IrCurve::try_from(points.clone()).map_err(|e| invalid("ir_curve.points", e.to_string()))?
        }
        IrCurveConfig::Csv { csv } => {
            let path = base.join(csv);
            let file = std::fs::File::open(&path).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
            IrCurve::from_csv(file).map_err(|e| invalid("ir_curve.csv", e.to_string()))?
        }
    };

    Scenario::new(plan, spans, launch, cfg.isrs, cfg.temperature_k, ir_curve, cfg.solver)
}

fn fiber_error(name: &str, e: FiberError) -> ScenarioError {
    invalid(format!("fibers.{name}"), e.to_string())
}

fn resolve_launch(cfg: &LaunchConfig, plan: &ChannelPlan) -> Result<Vec<f64>, ScenarioError> {
    let n = plan.len();
    match (cfg.flat_dbm, &cfg.per_band_dbm, &cfg.per_channel_dbm) {
        (None, None, None) => Ok(vec![0.0; n]),
        (Some(p), None, None) => Ok(vec![p; n]),
        (None, Some(map), None) => plan
            .channels()
            .iter()
            .map(|c| {
                map.get(&c.band)
                    .copied()
                    .ok_or_else(|| invalid("launch.per_band_dbm", format!("missing band {}", c.band)))
            })
            .collect(),
        (None, None, Some(list)) => {
            if list.len() != n {
                return Err(invalid(
                    "launch.per_channel_dbm",
                    format!("{} entries for {} channels", list.len(), n),
                ));
            }
            Ok(list.clone())
        }
        _ => Err(invalid("launch", "set exactly one of flat_dbm, per_band_dbm, per_channel_dbm")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nominal_bands() -> Vec<Band> {
        vec![
            Band { name: "L".into(), f_min_thz: 184.50, f_max_thz: 190.35 },
            Band { name: "C".into(), f_min_thz: 190.75, f_max_thz: 196.60 },
            Band { name: "S".into(), f_min_thz: 197.00, f_max_thz: 202.85 },
        ]
    }

    const THREE_BANDS: &str = r#"
        [grid]
        spacing_ghz = 118.75
        symbol_rate_gbd = 100.0
        roll_off = 0.1
        channels_per_band = 50

        [[bands]]
        name = "L"
        f_min_thz = 184.50
        f_max_thz = 190.35
        noise_figure_db = 6.0

        [[bands]]
        name = "C"
        f_min_thz = 190.75
        f_max_thz = 196.60
        noise_figure_db = 5.0

        [[bands]]
        name = "S"
        f_min_thz = 197.00
        f_max_thz = 202.85
        noise_figure_db = 6.0

        [link]
        span_count = 10
        length_km = 100.0
        lumped_loss_db = 2.8
    "#;

    #[test]
    fn anchor_rule_l_band() {
        let bands = [Band { name: "L".into(), f_min_thz: 184.50, f_max_thz: 190.45 }];
        let plan = build_channel_grid(&bands, 50, 118.75, 100.0, 0.1).unwrap();
        let c = plan.channels();
        assert_eq!(c.len(), 50);
        assert_relative_eq!(c[0].center_thz, 184.559_375, epsilon = 1e-9);
        assert_relative_eq!(c[49].center_thz, 190.378_125, epsilon = 1e-9);
    }

    #[test]
    fn single_channel_sits_half_a_spacing_in() {
        let bands = [Band { name: "C".into(), f_min_thz: 191.0, f_max_thz: 192.0 }];
        let plan = build_channel_grid(&bands, 1, 118.75, 100.0, 0.1).unwrap();
        assert_relative_eq!(plan.channels()[0].center_thz, 191.059_375, epsilon = 1e-12);
    }

    #[test]
    fn strict_grid_reports_overflow() {
        let err = build_channel_grid(&nominal_bands(), 50, 118.75, 100.0, 0.1).unwrap_err();
        match err {
            GridError::Overflow { band, overflow_ghz } => {
                assert_eq!(band, "L");
                assert_relative_eq!(overflow_ghz, 87.5, epsilon = 1e-6);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn grid_is_regular_within_bands() {
        let mut bands = nominal_bands();
        for b in &mut bands {
            b.f_max_thz += 0.1;
        }
        let plan = build_channel_grid(&bands, 50, 118.75, 100.0, 0.1).unwrap();
        assert_eq!(plan.len(), 150);
        for w in plan.channels().windows(2) {
            assert!(w[1].center_thz > w[0].center_thz);
            if w[0].band == w[1].band {
                assert_relative_eq!(w[1].center_thz - w[0].center_thz, 0.11875, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn spacing_too_small() {
        let bands = [Band { name: "C".into(), f_min_thz: 191.0, f_max_thz: 196.0 }];
        let err = build_channel_grid(&bands, 10, 100.0, 100.0, 0.1).unwrap_err();
        assert!(matches!(err, GridError::BandwidthExceedsSpacing { .. }));
    }

    #[test]
    fn load_nominal_bands_gives_150_channels() {
        let s = load_scenario(THREE_BANDS).unwrap();
        assert_eq!(s.channel_count(), 150);
        assert_eq!(s.spans().len(), 10);
        assert!(s.isrs_enabled());
        assert_eq!(s.reference_temperature_k(), 300.0);
        assert_eq!(s.launch_dbm(), &[0.0; 150][..]);
        // the L envelope grows to the last slot edge
        assert_relative_eq!(s.plan().bands()[0].f_max_thz, 190.4375, epsilon = 1e-9);
        assert_eq!(s.spans()[0].amplifier_for("C").unwrap().noise_figure_db, 5.0);
    }

    #[test]
    fn strict_edges_reject_nominal_bands() {
        let text = THREE_BANDS.replace("channels_per_band = 50", "channels_per_band = 50\nband_edges = \"strict\"");
        let err = load_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("overflows"), "{err}");
    }

    #[test]
    fn zero_spans_rejected() {
        let text = THREE_BANDS.replace("span_count = 10", "span_count = 0");
        let err = load_scenario(&text).unwrap_err();
        assert_eq!(err.to_string(), "spans: spans must be non-empty");
        let no_link = "spans = []\n".to_string() + THREE_BANDS.split("[link]").next().unwrap();
        assert!(load_scenario(&no_link).unwrap_err().to_string().contains("spans must be non-empty"));
    }

    #[test]
    fn occupied_bandwidth_over_spacing_rejected() {
        let text = THREE_BANDS.replace("spacing_ghz = 118.75", "spacing_ghz = 100.0");
        let err = load_scenario(&text).unwrap_err();
        match err {
            ScenarioError::Validation { path, message } => {
                assert_eq!(path, "grid.spacing_ghz");
                assert!(message.contains("110"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_document_is_a_parse_error() {
        assert!(matches!(load_scenario("[grid\nspacing"), Err(ScenarioError::Parse(_))));
        assert!(matches!(load_scenario("bogus = 1"), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn field_paths_in_diagnostics() {
        let text = THREE_BANDS.replace("lumped_loss_db = 2.8", "lumped_loss_db = -1.0");
        assert!(load_scenario(&text).unwrap_err().to_string().starts_with("spans[0].lumped_loss_db"));
        let text = THREE_BANDS.replace("noise_figure_db = 5.0", "noise_figure_db = 2.0");
        assert!(load_scenario(&text).unwrap_err().to_string().contains("noise_figure_db"));
        let text = format!("{THREE_BANDS}\n[launch]\nper_channel_dbm = [0.0, 1.0]\n");
        assert!(load_scenario(&text).unwrap_err().to_string().starts_with("launch.per_channel_dbm"));
        let text = THREE_BANDS.replace("length_km = 100.0", "length_km = 100.0\nfiber = \"nope\"");
        assert!(load_scenario(&text).unwrap_err().to_string().starts_with("link.fiber"));
    }

    #[test]
    fn pumps_are_validated() {
        let text = format!("{THREE_BANDS}\n[[pumps]]\nfreq_thz = 212.0\npower_dbm = 21.0\ndirection = \"forward\"\n");
        assert!(load_scenario(&text).unwrap_err().to_string().contains("forward"));
        let text = format!("{THREE_BANDS}\n[[pumps]]\nfreq_thz = 212.0\npower_dbm = 21.0\n");
        let s = load_scenario(&text).unwrap();
        assert_eq!(s.pump_count(), Some(1));
        assert!(s.spans().iter().all(|sp| sp.pumps[0].freq_thz == 212.0));
    }

    #[test]
    fn launch_forms() {
        let text = format!("{THREE_BANDS}\n[launch]\nper_band_dbm = {{ L = -1.0, C = 0.0, S = 2.0 }}\n");
        let s = load_scenario(&text).unwrap();
        assert_eq!(s.launch_dbm()[0], -1.0);
        assert_eq!(s.launch_dbm()[149], 2.0);
        let text = format!("{THREE_BANDS}\n[launch]\nflat_dbm = 1.0\nper_band_dbm = {{ L = 1.0 }}\n");
        assert!(load_scenario(&text).is_err());
    }

    #[test]
    fn toml_round_trip_is_identical() {
        let text = format!("{THREE_BANDS}\n[[pumps]]\nfreq_thz = 212.0\npower_dbm = 21.0\n[launch]\nflat_dbm = 0.5\n");
        let s = load_scenario(&text).unwrap();
        let again = load_scenario(&s.to_toml()).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.hash(), s.hash());
        assert_eq!(again.to_toml(), s.to_toml());
    }

    #[test]
    fn json_export_names_core_fields() {
        let s = load_scenario(THREE_BANDS).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(v["plan"]["channels"].as_array().unwrap().len(), 150);
        assert_eq!(v["spans"].as_array().unwrap().len(), 10);
        assert!(v["isrs_enabled"].as_bool().unwrap());
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = load_scenario(THREE_BANDS).unwrap();
        let reformatted = THREE_BANDS.replace("span_count = 10", "span_count   =   10 # ten spans");
        assert_eq!(load_scenario(&reformatted).unwrap().hash(), a.hash());
        let other = THREE_BANDS.replace("lumped_loss_db = 2.8", "lumped_loss_db = 3.8");
        assert_ne!(load_scenario(&other).unwrap().hash(), a.hash());
    }
}
