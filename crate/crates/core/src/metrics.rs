//! Lumped-amplifier ASE, OSNR/GSNR composition, the transponder
//! information-rate curve and throughput.
//!
//! ASE is the dual-polarization power inside the channel bandwidth, so the
//! OSNR here is an in-band SNR rather than a 0.1 nm referenced figure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::linear_clamped;
use crate::units::{db_to_linear, linear_to_db, photon_noise_power, watt_to_dbm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("amplifier gain {gain} < 1 is not supported")]
    GainBelowUnity { gain: f64 },
    #[error("launch power must be positive, got {0} W")]
    NonPositiveLaunch(f64),
    #[error("equivalent noise figure undefined for on/off gain {0} dB")]
    UndefinedGain(f64),
    #[error("invalid information-rate curve: {0}")]
    InvalidCurve(String),
}

/// Net information rate versus GSNR. Piecewise linear between the points,
/// saturating above the last one and extrapolated with the first segment's
/// slope (floored at zero) below the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IrCurvePoints", into = "IrCurvePoints")]
pub struct IrCurve {
    gsnr_db: Vec<f64>,
    rate_tbps: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrCurvePoints {
    /// `[gsnr_dB, rate_Tbps]` pairs.
    pub points: Vec<[f64; 2]>,
}

impl From<IrCurve> for IrCurvePoints {
    fn from(c: IrCurve) -> Self {
        IrCurvePoints {
            points: c.gsnr_db.iter().zip(&c.rate_tbps).map(|(&g, &r)| [g, r]).collect(),
        }
    }
}

impl TryFrom<IrCurvePoints> for IrCurve {
    type Error = MetricsError;
    fn try_from(p: IrCurvePoints) -> Result<Self, MetricsError> {
        IrCurve::new(p.points.into_iter().map(|[g, r]| (g, r)).collect())
    }
}

impl IrCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, MetricsError> {
        let bad = |m: &str| Err(MetricsError::InvalidCurve(m.into()));
        if points.len() < 2 {
            return bad("at least two points are required");
        }
        if points.iter().any(|(g, r)| !g.is_finite() || !r.is_finite()) {
            return bad("points must be finite");
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("GSNR values must be strictly increasing");
        }
        if points.windows(2).any(|w| w[1].1 < w[0].1) {
            return bad("rates must be non-decreasing");
        }
        if points[0].1 < 0.0 {
            return bad("rates must be non-negative");
        }
        let (gsnr_db, rate_tbps) = points.into_iter().unzip();
        Ok(IrCurve { gsnr_db, rate_tbps })
    }

    /// Synthetic 100 GBd transponder curve, saturating at 1.10 Tb/s.
    pub fn synthetic_default() -> Self {
        IrCurve::new(vec![
            (5.0, 0.20),
            (10.0, 0.40),
            (15.0, 0.60),
            (20.0, 0.80),
            (25.0, 1.00),
            (28.0, 1.10),
        ])
        .expect("default curve is valid")
    }

    /// Reads a two-column `(gsnr_dB, rate_Tbps)` CSV.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self, MetricsError> {
        let rows = crate::tables::read_pairs_csv(reader).map_err(MetricsError::InvalidCurve)?;
        Self::new(rows)
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.gsnr_db.iter().copied().zip(self.rate_tbps.iter().copied())
    }

    pub fn saturation_rate(&self) -> f64 {
        *self.rate_tbps.last().unwrap()
    }

    /// Same shape with every rate multiplied by `k > 0`.
    pub fn scaled(&self, k: f64) -> Self {
        IrCurve {
            gsnr_db: self.gsnr_db.clone(),
            rate_tbps: self.rate_tbps.iter().map(|r| r * k).collect(),
        }
    }

    pub fn rate(&self, gsnr_db: f64) -> f64 {
        if gsnr_db.is_nan() {
            return 0.0;
        }
        if gsnr_db < self.gsnr_db[0] {
            let slope = (self.rate_tbps[1] - self.rate_tbps[0]) / (self.gsnr_db[1] - self.gsnr_db[0]);
            return (self.rate_tbps[0] - slope * (self.gsnr_db[0] - gsnr_db)).max(0.0);
        }
        linear_clamped(&self.gsnr_db, &self.rate_tbps, gsnr_db)
    }
}

/// ASE of a lumped amplifier in the channel bandwidth:
/// `P = (F·G − 1)·h·f·B`.
pub fn dfa_ase(gain_linear: f64, nf_db: f64, f_thz: f64, b_ch_ghz: f64) -> Result<f64, MetricsError> {
    if !(gain_linear >= 1.0) {
        return Err(MetricsError::GainBelowUnity { gain: gain_linear });
    }
    let f = db_to_linear(nf_db);
    Ok(((f * gain_linear - 1.0).max(0.0)) * photon_noise_power(f_thz, b_ch_ghz))
}

/// Set when a ratio's denominator vanished and the dB value is `+inf`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfiniteRatios {
    pub osnr: bool,
    pub osnr_dfa_only: bool,
    pub gsnr_nli: bool,
    pub gsnr: bool,
}

impl InfiniteRatios {
    pub fn any(&self) -> bool {
        self.osnr || self.osnr_dfa_only || self.gsnr_nli || self.gsnr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub launch_power_dbm: f64,
    pub p_ase_total_w: f64,
    pub p_ase_dfa_w: f64,
    pub p_ase_raman_w: f64,
    pub p_nli_w: f64,
    pub osnr_db: f64,
    pub osnr_dfa_only_db: f64,
    pub gsnr_nli_db: f64,
    pub gsnr_db: f64,
    pub info_rate_tbps: f64,
    pub infinite: InfiniteRatios,
}

fn ratio_db(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den > 0.0 {
        linear_to_db(num / den)
    } else {
        *flag = true;
        f64::INFINITY
    }
}

pub fn channel_metrics(
    launch_w: f64,
    p_ase_dfa_w: f64,
    p_ase_raman_w: f64,
    p_nli_w: f64,
    ir_curve: &IrCurve,
) -> Result<ChannelMetrics, MetricsError> {
    if !(launch_w > 0.0) {
        return Err(MetricsError::NonPositiveLaunch(launch_w));
    }
    let mut infinite = InfiniteRatios::default();
    let ase = p_ase_dfa_w + p_ase_raman_w;
    let osnr_db = ratio_db(launch_w, ase, &mut infinite.osnr);
    let osnr_dfa_only_db = ratio_db(launch_w, p_ase_dfa_w, &mut infinite.osnr_dfa_only);
    let gsnr_nli_db = ratio_db(launch_w, p_nli_w, &mut infinite.gsnr_nli);
    let gsnr_db = ratio_db(launch_w, ase + p_nli_w, &mut infinite.gsnr);
    Ok(ChannelMetrics {
        launch_power_dbm: watt_to_dbm(launch_w),
        p_ase_total_w: ase,
        p_ase_dfa_w,
        p_ase_raman_w,
        p_nli_w,
        osnr_db,
        osnr_dfa_only_db,
        gsnr_nli_db,
        gsnr_db,
        info_rate_tbps: ir_curve.rate(gsnr_db),
        infinite,
    })
}

/// Sum of per-channel information rates, Tb/s.
pub fn throughput(metrics: &[ChannelMetrics]) -> f64 {
    metrics.iter().map(|m| m.info_rate_tbps).sum()
}

/// Noise figure (dB) of a fictitious lumped amplifier with the same gain
/// and ASE as a distributed Raman stage. Negative values are expected.
pub fn equivalent_nf(on_off_gain_db: f64, p_ase_raman_w: f64, f_thz: f64, b_ch_ghz: f64) -> Result<f64, MetricsError> {
    if !(on_off_gain_db > 0.0) {
        return Err(MetricsError::UndefinedGain(on_off_gain_db));
    }
    Ok(linear_to_db(equivalent_nf_factor(db_to_linear(on_off_gain_db), p_ase_raman_w, f_thz, b_ch_ghz)))
}

/// Linear equivalent noise factor, without the positive-gain precondition.
fn equivalent_nf_factor(gain_linear: f64, p_ase_raman_w: f64, f_thz: f64, b_ch_ghz: f64) -> f64 {
    (p_ase_raman_w / photon_noise_power(f_thz, b_ch_ghz) + 1.0) / gain_linear
}
