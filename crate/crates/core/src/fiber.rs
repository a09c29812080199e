//! Frequency-dependent fiber properties: attenuation, dispersion, mode
//! area, the pairwise Kerr coefficient and the Raman gain efficiency.
//!
//! All public methods take frequencies in THz. Loss extrapolation uses a
//! Rayleigh-plus-constant law `α(λ) = A/λ⁴ + B` fitted to the anchors; the
//! mode field radius follows the Marcuse step-index approximation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::Pchip;
use crate::units::{db_per_km_to_per_km, thz_to_nm, SPEED_OF_LIGHT, THZ};

/// Frequency window (THz) over which loss and dispersion are modelled. It
/// reaches beyond the S-band so that Raman pumps can be described.
pub const VALIDITY_WINDOW_THZ: (f64, f64) = (180.0, 230.0);

/// Largest per-anchor residual of the loss fit, dB/km.
pub const LOSS_FIT_TOLERANCE_DB_KM: f64 = 0.005;

/// Pinned Rayleigh coefficient of [`FiberSpec::standard_smf`], dB·µm⁴/km.
pub const DEFAULT_RAYLEIGH_A: f64 = 0.01;

const V_NUMBER_RANGE: (f64, f64) = (0.8, 2.8);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FiberError {
    #[error("{quantity} = {value} outside the valid range [{min}, {max}]")]
    OutOfRange {
        quantity: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("mode model invalid at {freq_thz} THz: V-number {v:.3} outside (0.8, 2.8)")]
    ModelValidity { freq_thz: f64, v: f64 },
    #[error("raman_gain expects the signal below the pump (f = {f_thz} THz, pump {pump_thz} THz)")]
    RamanGainSide { f_thz: f64, pump_thz: f64 },
    #[error("invalid fiber spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossAnchor {
    pub freq_thz: f64,
    pub alpha_db_km: f64,
}

/// `α(λ) = a/λ⁴ + b` with λ in µm and α in dB/km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighFit {
    pub a_db_um4_km: f64,
    pub b_db_km: f64,
    /// Largest absolute residual over the anchors, dB/km.
    pub max_residual_db_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionAnchor {
    /// Zero-dispersion wavelength, nm.
    pub lambda0_nm: f64,
    /// Dispersion slope at `lambda0_nm`, ps/(nm²·km).
    pub s0_ps_nm2_km: f64,
}

/// Measured Raman gain efficiency versus pump-signal detuning at a
/// reference pump frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamanReference {
    pub pump_ref_thz: f64,
    /// Detuning (THz) to efficiency (1/(W·km)).
    pub table: Pchip,
}

impl RamanReference {
    pub fn new(pump_ref_thz: f64, detuning_thz: Vec<f64>, c_r: Vec<f64>) -> Result<Self, FiberError> {
        if !(pump_ref_thz > 0.0) {
            return Err(FiberError::InvalidSpec("raman reference pump must be positive".into()));
        }
        if detuning_thz.first() != Some(&0.0) || c_r.first() != Some(&0.0) {
            return Err(FiberError::InvalidSpec(
                "raman table must start at zero detuning with zero efficiency".into(),
            ));
        }
        if c_r.iter().any(|&v| v < 0.0) {
            return Err(FiberError::InvalidSpec("raman efficiency must be non-negative".into()));
        }
        let table = Pchip::new(detuning_thz, c_r).map_err(|e| FiberError::InvalidSpec(format!("raman table: {e}")))?;
        Ok(RamanReference { pump_ref_thz, table })
    }

    /// Parses a two-column CSV of `(detuning_THz, C_R)`.
    pub fn from_csv<R: std::io::Read>(reader: R, pump_ref_thz: f64) -> Result<Self, FiberError> {
        let rows = crate::tables::read_pairs_csv(reader).map_err(FiberError::InvalidSpec)?;
        let (x, y) = rows.into_iter().unzip();
        Self::new(pump_ref_thz, x, y)
    }

    pub fn max_detuning_thz(&self) -> f64 {
        self.table.domain().1
    }

    /// Synthetic silica profile: peak 0.40 1/(W·km) at 13.2 THz for a
    /// 206.5 THz pump, shoulder near 14.7 THz and a long tail to 45 THz.
    pub fn synthetic_silica() -> Self {
        const SHAPE: [(f64, f64); 31] = [
            (0.0, 0.0),
            (0.5, 0.03),
            (1.0, 0.06),
            (2.0, 0.12),
            (3.0, 0.18),
            (4.0, 0.24),
            (5.0, 0.30),
            (6.0, 0.36),
            (7.0, 0.42),
            (8.0, 0.48),
            (9.0, 0.55),
            (10.0, 0.64),
            (11.0, 0.75),
            (12.0, 0.88),
            (13.2, 1.0),
            (14.0, 0.97),
            (14.7, 0.92),
            (15.5, 0.72),
            (16.5, 0.38),
            (17.5, 0.25),
            (18.5, 0.22),
            (20.0, 0.20),
            (22.0, 0.17),
            (25.0, 0.16),
            (26.5, 0.12),
            (28.0, 0.08),
            (30.0, 0.05),
            (33.0, 0.03),
            (36.0, 0.02),
            (40.0, 0.01),
            (45.0, 0.0),
        ];
        let (x, y): (Vec<f64>, Vec<f64>) = SHAPE.iter().map(|&(d, s)| (d, 0.40 * s)).unzip();
        Self::new(206.5, x, y).expect("built-in table is valid")
    }
}

/// Raw, serializable fiber description. [`FiberSpec`] is the validated form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    pub name: String,
    pub loss_anchors: Vec<LossAnchor>,
    /// Pins the Rayleigh coefficient; only the constant term is fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rayleigh_a_db_um4_km: Option<f64>,
    pub dispersion: DispersionAnchor,
    /// Nonlinear index, m²/W.
    pub n2_m2_w: f64,
    pub core_radius_um: f64,
    pub numerical_aperture: f64,
    pub raman: RamanReference,
    /// When set, every property is evaluated at this frequency regardless of
    /// the requested one (a frequency-flat test fiber).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat_at_thz: Option<f64>,
}

/// Validated fiber model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FiberParams", into = "FiberParams")]
pub struct FiberSpec {
    params: FiberParams,
    rayleigh: RayleighFit,
}

impl From<FiberSpec> for FiberParams {
    fn from(f: FiberSpec) -> Self {
        f.params
    }
}

impl TryFrom<FiberParams> for FiberSpec {
    type Error = FiberError;
    fn try_from(p: FiberParams) -> Result<Self, FiberError> {
        FiberSpec::new(p)
    }
}

impl FiberSpec {
    pub fn new(params: FiberParams) -> Result<Self, FiberError> {
        let invalid = |m: &str| Err(FiberError::InvalidSpec(m.to_string()));
        if params.loss_anchors.is_empty() {
            return invalid("loss_anchors must be non-empty");
        }
        if params.loss_anchors.iter().any(|a| !(a.alpha_db_km >= 0.0)) {
            return invalid("loss anchors must have non-negative alpha");
        }
        for a in &params.loss_anchors {
            check_window("loss anchor frequency", a.freq_thz)?;
        }
        if !(params.n2_m2_w > 0.0) {
            return invalid("n2 must be positive");
        }
        if !(params.core_radius_um > 0.0) || !(params.numerical_aperture > 0.0) {
            return invalid("core radius and numerical aperture must be positive");
        }
        if !(params.dispersion.lambda0_nm > 0.0) {
            return invalid("zero-dispersion wavelength must be positive");
        }
        if let Some(f) = params.flat_at_thz {
            check_window("flat_at_thz", f)?;
        }
        let rayleigh = fit_rayleigh(&params.loss_anchors, params.rayleigh_a_db_um4_km)?;
        let spec = FiberSpec { params, rayleigh };
        for f in [VALIDITY_WINDOW_THZ.0, VALIDITY_WINDOW_THZ.1] {
            if spec.loss_db_km(f)? < 0.0 {
                return invalid("loss fit turns negative inside the validity window");
            }
        }
        // the mode model must hold across the whole window
        spec.mode_field_radius_um(VALIDITY_WINDOW_THZ.0)?;
        spec.mode_field_radius_um(VALIDITY_WINDOW_THZ.1)?;
        Ok(spec)
    }

    /// Synthetic standard single-mode fiber used by the default scenario.
    pub fn standard_smf() -> Self {
        FiberSpec::new(FiberParams {
            name: "ssmf".into(),
            loss_anchors: vec![
                LossAnchor { freq_thz: 184.5, alpha_db_km: 0.197 },
                LossAnchor { freq_thz: 190.0, alpha_db_km: 0.190 },
                LossAnchor { freq_thz: 196.5, alpha_db_km: 0.190 },
            ],
            // a free fit of these anchors has a negative slope; a small pinned
            // Rayleigh term keeps the loss rising towards the S-band
            rayleigh_a_db_um4_km: Some(DEFAULT_RAYLEIGH_A),
            dispersion: DispersionAnchor { lambda0_nm: 1310.0, s0_ps_nm2_km: 0.092 },
            n2_m2_w: 2.6e-20,
            core_radius_um: 4.1,
            numerical_aperture: 0.12,
            raman: RamanReference::synthetic_silica(),
            flat_at_thz: None,
        })
        .expect("default fiber is valid")
    }

    pub fn params(&self) -> &FiberParams {
        &self.params
    }

    pub fn name(&self) -> &str {
        &self.params.name
    }

    pub fn rayleigh(&self) -> RayleighFit {
        self.rayleigh
    }

    pub fn raman_reference(&self) -> &RamanReference {
        &self.params.raman
    }

    fn at(&self, f_thz: f64) -> f64 {
        self.params.flat_at_thz.unwrap_or(f_thz)
    }

    /// Attenuation in dB/km.
    pub fn loss_db_km(&self, f_thz: f64) -> Result<f64, FiberError> {
        check_window("frequency (THz)", f_thz)?;
        let lam_um = thz_to_nm(self.at(f_thz)) * 1e-3;
        Ok(self.rayleigh.a_db_um4_km / lam_um.powi(4) + self.rayleigh.b_db_km)
    }

    /// Power attenuation coefficient in natural units, 1/km.
    pub fn loss_coefficient(&self, f_thz: f64) -> Result<f64, FiberError> {
        self.loss_db_km(f_thz).map(db_per_km_to_per_km)
    }

    /// Chromatic dispersion D in ps/(nm·km).
    pub fn dispersion_d(&self, f_thz: f64) -> Result<f64, FiberError> {
        check_window("frequency (THz)", f_thz)?;
        let lam = thz_to_nm(self.at(f_thz));
        let DispersionAnchor { lambda0_nm, s0_ps_nm2_km } = self.params.dispersion;
        Ok(s0_ps_nm2_km / 4.0 * (lam - lambda0_nm.powi(4) / lam.powi(3)))
    }

    /// Group-velocity dispersion β2 in ps²/km.
    pub fn dispersion_beta2(&self, f_thz: f64) -> Result<f64, FiberError> {
        let d = self.dispersion_d(f_thz)?;
        Ok(beta2_from_d(d, thz_to_nm(self.at(f_thz))))
    }

    /// Marcuse mode field radius in µm. Checks the V-number regime only, so
    /// it can be evaluated off the loss/dispersion window.
    pub fn mode_field_radius_um(&self, f_thz: f64) -> Result<f64, FiberError> {
        let f = self.at(f_thz);
        let lam_um = thz_to_nm(f) * 1e-3;
        let a = self.params.core_radius_um;
        let v = 2.0 * PI * a * self.params.numerical_aperture / lam_um;
        if !(V_NUMBER_RANGE.0 < v && v < V_NUMBER_RANGE.1) {
            return Err(FiberError::ModelValidity { freq_thz: f, v });
        }
        Ok(a * (0.65 + 1.619 * v.powf(-1.5) + 2.879 * v.powi(-6)))
    }

    /// Effective mode area π·w², µm².
    pub fn effective_area(&self, f_thz: f64) -> Result<f64, FiberError> {
        let w = self.mode_field_radius_um(f_thz)?;
        Ok(PI * w * w)
    }

    /// Gaussian-mode overlap area π·(w1² + w2²)/2, µm².
    pub fn overlap_area(&self, f1_thz: f64, f2_thz: f64) -> Result<f64, FiberError> {
        let w1 = self.mode_field_radius_um(f1_thz)?;
        let w2 = self.mode_field_radius_um(f2_thz)?;
        Ok(PI * (w1 * w1 + w2 * w2) / 2.0)
    }

    /// Nonlinearity coefficient seen at `f1_thz` due to a wave at `f2_thz`,
    /// 1/(W·km). `gamma_xci(f, f)` is the single-channel value.
    pub fn gamma_xci(&self, f1_thz: f64, f2_thz: f64) -> Result<f64, FiberError> {
        check_window("frequency (THz)", f1_thz)?;
        check_window("frequency (THz)", f2_thz)?;
        let a_ov = self.overlap_area(f1_thz, f2_thz)? * 1e-12;
        let f1 = self.at(f1_thz) * THZ;
        Ok(2.0 * PI * f1 * self.params.n2_m2_w / (SPEED_OF_LIGHT * a_ov) * 1e3)
    }

    /// Raman gain efficiency at signal `f_thz` from a pump at `pump_thz`,
    /// 1/(W·km), for `f_thz ≤ pump_thz`. The reference spectrum is shifted to
    /// the pump and scaled by the pump-frequency and overlap-area ratios.
    pub fn raman_gain(&self, f_thz: f64, pump_thz: f64) -> Result<f64, FiberError> {
        if f_thz > pump_thz {
            return Err(FiberError::RamanGainSide { f_thz, pump_thz });
        }
        let raman = &self.params.raman;
        let detuning = pump_thz - f_thz;
        let c_ref = raman.table.eval(detuning).ok_or(FiberError::OutOfRange {
            quantity: "raman detuning (THz)",
            value: detuning,
            min: 0.0,
            max: raman.max_detuning_thz(),
        })?;
        if c_ref == 0.0 || self.params.flat_at_thz.is_some() {
            return Ok(c_ref);
        }
        let f_ref = raman.pump_ref_thz;
        let a_ref = self.overlap_area(f_ref - detuning, f_ref)?;
        let a_ov = self.overlap_area(f_thz, pump_thz)?;
        Ok(scale_raman_efficiency(c_ref, pump_thz, f_ref, a_ref, a_ov))
    }
}

/// Moves a reference Raman efficiency measured with pump `f_ref` to a pump
/// at `pump`: linear in pump frequency, inverse in overlap area.
pub fn scale_raman_efficiency(c_ref: f64, pump: f64, f_ref: f64, area_ref: f64, area: f64) -> f64 {
    c_ref * (pump / f_ref) * (area_ref / area)
}

/// β2 (ps²/km) from D (ps/(nm·km)) at wavelength λ (nm).
pub fn beta2_from_d(d_ps_nm_km: f64, lambda_nm: f64) -> f64 {
    // D [ps/(nm km)] = 1e-6 s/m²; β2 = -D λ² / (2πc) in s²/m, then ps²/km
    let d_si = d_ps_nm_km * 1e-6;
    let lam = lambda_nm * 1e-9;
    -d_si * lam * lam / (2.0 * PI * SPEED_OF_LIGHT) * 1e24 * 1e3
}

fn check_window(quantity: &'static str, f_thz: f64) -> Result<(), FiberError> {
    let (min, max) = VALIDITY_WINDOW_THZ;
    if !(min..=max).contains(&f_thz) {
        return Err(FiberError::OutOfRange { quantity, value: f_thz, min, max });
    }
    Ok(())
}

fn fit_rayleigh(anchors: &[LossAnchor], fixed_a: Option<f64>) -> Result<RayleighFit, FiberError> {
    let xs: Vec<f64> = anchors
        .iter()
        .map(|a| (thz_to_nm(a.freq_thz) * 1e-3).powi(-4))
        .collect();
    let ys: Vec<f64> = anchors.iter().map(|a| a.alpha_db_km).collect();
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;

    let distinct = xs.iter().any(|&x| (x - xs[0]).abs() > 1e-12);
    let a = match fixed_a {
        Some(a) => a,
        None if !distinct => 0.0,
        None => {
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
            let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
            sxy / sxx
        }
    };
    if a < 0.0 {
        return Err(FiberError::InvalidSpec(format!(
            "loss anchors imply a negative Rayleigh coefficient ({a:.4} dB·µm⁴/km); \
             pin rayleigh_a_db_um4_km or revise the anchors"
        )));
    }
    let b = mean_y - a * mean_x;
    let max_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (a * x + b - y).abs())
        .fold(0.0, f64::max);
    if max_residual > LOSS_FIT_TOLERANCE_DB_KM {
        return Err(FiberError::InvalidSpec(format!(
            "loss fit misses an anchor by {max_residual:.4} dB/km (limit {LOSS_FIT_TOLERANCE_DB_KM})"
        )));
    }
    Ok(RayleighFit { a_db_um4_km: a, b_db_km: b, max_residual_db_km: max_residual })
}
